import csv
import math

import numpy as np
import pytest

from snapdistill.data import Dataset
from snapdistill.errors import ConfigError, NumericError
from snapdistill.models import ModelSpec, build_model
from snapdistill.schedule import Mode
from snapdistill.snapshots import Snapshot, register_teacher
from snapdistill.trainer import METRICS_FIELDS, RunConfig, Trainer, read_metrics


def mlp_cfg(ds, mode=Mode.SD, k=2, epochs=4, seed=0, hidden="16", **kw):
    spec = ModelSpec.from_name(f"mlp:{hidden}", ds.num_classes, input_dim=ds.input_shape[0])
    return RunConfig(spec, mode=mode, k=k, epochs=epochs, batch_size=kw.pop("batch_size", 16), seed=seed, **kw)


def hand_mlp_grads(W0, b0, W1, b1, x, y):
    """Gradient of the mean cross-entropy of relu(x W0 + b0) W1 + b1, by hand."""
    h_pre = x @ W0 + b0
    h = np.maximum(h_pre, 0)
    z = h @ W1 + b1
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    dz = p.copy()
    dz[np.arange(len(y)), y] -= 1
    dz /= len(y)
    dW1, db1 = h.T @ dz, dz.sum(0)
    dh = (dz @ W1.T) * (h_pre > 0)
    return x.T @ dh, dh.sum(0), dW1, db1


class TestConfig:
    def test_validation(self, tiny_flat):
        ds = tiny_flat[0]
        with pytest.raises(ConfigError, match="k >= 2"):
            mlp_cfg(ds, mode=Mode.SD, k=1)
        with pytest.raises(ConfigError):
            mlp_cfg(ds, mode=Mode.BL, k=4)
        with pytest.raises(ConfigError):
            mlp_cfg(ds, k=5, epochs=4)
        with pytest.raises(ConfigError):
            mlp_cfg(ds, temperature=0.0)

    def test_ensemble_temperature(self, tiny_flat):
        assert mlp_cfg(tiny_flat[0], temperature=3.0).ensemble_temperature == 3.0
        assert mlp_cfg(tiny_flat[0], mode=Mode.SE, temperature=3.0).ensemble_temperature == 1.0
        assert mlp_cfg(tiny_flat[0], temperature=3.0, lambda_t=0.0).ensemble_temperature == 1.0


class TestSingleStep:
    def test_plain_sgd_step_matches_hand_gradient(self, tiny_flat):
        ds = tiny_flat[0]
        cfg = mlp_cfg(ds, mode=Mode.BL, k=1, epochs=2, batch_size=len(ds), momentum=0.0,
                      weight_decay=0.0, dtype="float64", alpha=0.05)
        tr = Trainer(cfg, ds)
        state = tr.init_state()
        p = {n: t.data.copy() for n, t in state.model.params.items()}
        tr.fit(state, stop_epoch=1)
        assert state.iteration == 1
        x, y = ds.images.astype(np.float64), ds.labels
        g = hand_mlp_grads(p["fc0.weight"], p["fc0.bias"], p["fc1.weight"], p["fc1.bias"], x, y)
        lr = 0.5 * 0.05 * (1 + math.cos(math.pi * 1 / 2))  # iteration 1 of a 2-iteration cycle
        for name, gi in zip(["fc0.weight", "fc0.bias", "fc1.weight", "fc1.bias"], g):
            np.testing.assert_allclose(state.model.params[name].data, p[name] - lr * gi, rtol=1e-10, atol=1e-13)

    def test_zero_epochs_leaves_model_unchanged(self, tiny_flat):
        ds = tiny_flat[0]
        tr = Trainer(mlp_cfg(ds, epochs=0), ds)
        state = tr.init_state()
        before = state.model.checksum()
        res = tr.fit(state)
        assert res.model.checksum() == before and res.snapshots == [] and res.metrics == []


class TestModes:
    def test_baseline_has_no_kl(self, tiny_flat):
        res = Trainer(mlp_cfg(tiny_flat[0], mode=Mode.BL, k=1, epochs=3), *tiny_flat).fit()
        assert all(m.loss_kl == 0.0 and m.lambda_t == 0.0 and m.lambda_s == 1.0 for m in res.metrics)
        assert all(m.teacher_iter == 0 for m in res.metrics)
        assert len(res.snapshots) == 1

    def test_sd_weights_and_teacher_per_generation(self, tiny_flat):
        cfg = mlp_cfg(tiny_flat[0], k=4, epochs=8, temperature=2.0)
        tr = Trainer(cfg, *tiny_flat)
        res = tr.fit()
        b = tr.schedule.boundaries
        gens = [m.mini_gen for m in res.metrics]
        assert gens == [1, 1, 2, 2, 3, 3, 4, 4]
        for m in res.metrics:
            if m.mini_gen == 1:
                assert (m.lambda_s, m.lambda_t, m.loss_kl, m.teacher_iter) == (1.0, 0.0, 0.0, 0)
            else:
                assert (m.lambda_s, m.lambda_t) == (1.5, 1.0)
                assert m.teacher_iter == b[m.mini_gen - 2]
                assert m.loss_kl > 0

    def test_first_step_after_boundary_uses_teacher(self, tiny_flat):
        ds = tiny_flat[0]
        tr = Trainer(mlp_cfg(ds, k=2, epochs=2), ds)
        state = tr.init_state()
        tr.fit(state, stop_epoch=1)
        b1 = tr.schedule.boundaries[0]
        assert state.iteration == b1 and state.teacher.iteration == b1
        br = tr.train_step(state, ds.images[:8], ds.labels[:8])
        assert (br.lambda_s, br.lambda_t) == (1.5, 1.0)
        assert br.kl_term > 0

    def test_k_generations_give_k_snapshots(self, tiny_flat):
        tr = Trainer(mlp_cfg(tiny_flat[0], k=4, epochs=8), tiny_flat[0])
        res = tr.fit()
        assert [s.iteration for s in res.snapshots] == [*tr.schedule.boundaries, tr.schedule.total_iters]

    def test_se_and_sd_share_first_generation(self, tiny_flat):
        se = Trainer(mlp_cfg(tiny_flat[0], mode=Mode.SE, k=2, epochs=4), *tiny_flat).fit()
        sd = Trainer(mlp_cfg(tiny_flat[0], mode=Mode.SD, k=2, epochs=4), *tiny_flat).fit()
        assert se.snapshots[0].checksum() == sd.snapshots[0].checksum()
        assert [m.loss_total for m in se.metrics[:2]] == [m.loss_total for m in sd.metrics[:2]]
        assert se.snapshots[1].checksum() != sd.snapshots[1].checksum()

    def test_sd_without_teacher_weight_equals_se(self, tiny_flat):
        se = Trainer(mlp_cfg(tiny_flat[0], mode=Mode.SE, k=2, epochs=4), *tiny_flat).fit()
        sd = Trainer(mlp_cfg(tiny_flat[0], mode=Mode.SD, k=2, epochs=4, lambda_t=0.0), *tiny_flat).fit()
        assert se.model.checksum() == sd.model.checksum()

    def test_loss_decomposition(self, tiny_flat):
        res = Trainer(mlp_cfg(tiny_flat[0], k=2, epochs=4, temperature=3.0), *tiny_flat).fit()
        for m in res.metrics:
            assert abs(m.loss_total - (m.lambda_s * m.loss_ce + m.lambda_t * m.loss_kl)) < 1e-5

    def test_seed_reproducibility(self, tiny_flat):
        a = Trainer(mlp_cfg(tiny_flat[0], seed=3), *tiny_flat).fit()
        b = Trainer(mlp_cfg(tiny_flat[0], seed=3), *tiny_flat).fit()
        c = Trainer(mlp_cfg(tiny_flat[0], seed=4), *tiny_flat).fit()
        assert a.model.checksum() == b.model.checksum() != c.model.checksum()
        assert [m.csv_row() for m in a.metrics] == [m.csv_row() for m in b.metrics]

    def test_image_training_with_augmentation(self, tiny_images):
        train, test = tiny_images
        spec = ModelSpec("resnet", train.num_classes, depth=8, image_size=8, channels=(4, 8, 8))
        res = Trainer(RunConfig(spec, mode=Mode.SD, k=2, epochs=2, batch_size=8), train, test).fit()
        assert len(res.snapshots) == 2 and res.metrics[-1].test_err is not None

    def test_external_teacher_constant_weights(self, tiny_flat):
        ds = tiny_flat[0]
        other = build_model(ModelSpec.from_name("mlp:16", ds.num_classes, input_dim=6), 99)
        teacher = register_teacher(Snapshot.capture(other))
        cfg = mlp_cfg(ds, mode=Mode.BL, k=1, epochs=2, temperature=2.0)
        res = Trainer(cfg, ds, external_teacher=teacher).fit()
        assert all((m.lambda_s, m.lambda_t) == (1.5, 1.0) and m.loss_kl > 0 for m in res.metrics)


class TestFailures:
    def test_nan_input_aborts_with_record(self, tiny_flat):
        ds = tiny_flat[0]
        images = ds.images.copy()
        images[3, 0] = np.nan
        bad = Dataset(images, ds.labels, ds.num_classes)
        tr = Trainer(mlp_cfg(bad, batch_size=len(bad)), bad)
        with pytest.raises(NumericError) as e:
            tr.fit()
        assert e.value.record["iteration"] == 1
        assert e.value.node_id is not None


class TestMetricsFile:
    def test_one_row_per_epoch(self, tmp_path, tiny_flat):
        p = tmp_path / "metrics.csv"
        res = Trainer(mlp_cfg(tiny_flat[0], k=2, epochs=4), *tiny_flat, metrics_path=p).fit()
        with open(p) as f:
            header = next(csv.reader(f))
        assert tuple(header) == METRICS_FIELDS
        rows = read_metrics(p)
        assert len(rows) == 4
        assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4]
        assert float(rows[-1]["test_err"]) == pytest.approx(res.metrics[-1].test_err, rel=1e-8)
