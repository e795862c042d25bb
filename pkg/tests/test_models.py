import numpy as np
import pytest

from snapdistill.errors import ConfigError, ContractError
from snapdistill.models import ModelSpec, build_model, residual_block
from snapdistill.autodiff import Tensor


def hand_count(depth, classes, chans=(16, 32, 64), cin=3):
    """Count by layer: 3x3 convs without bias, BN gamma+beta, 1x1 projection on width change."""
    n = (depth - 2) // 6
    conv = lambda i, o, k=3: i * o * k * k  # noqa: E731
    total = conv(cin, chans[0]) + 2 * chans[0]
    prev = chans[0]
    for c in chans:
        for _ in range(n):
            total += conv(prev, c) + 2 * c + conv(c, c) + 2 * c
            if prev != c:
                total += conv(prev, c, 1)
            prev = c
    return total + prev * classes + classes


class TestParameterCounts:
    @pytest.mark.parametrize("depth", [8, 14, 20, 32, 56])
    def test_matches_hand_count(self, depth):
        spec = ModelSpec("resnet", 10, depth=depth)
        assert build_model(spec).num_parameters() == hand_count(depth, 10)

    def test_known_totals(self):
        assert build_model(ModelSpec("resnet", 10, depth=8)).num_parameters() == 77850
        assert build_model(ModelSpec("resnet", 10, depth=20)).num_parameters() == 272282
        # 100-way head adds 64*90 + 90
        assert build_model(ModelSpec("resnet", 100, depth=20)).num_parameters() == 272282 + 64 * 90 + 90

    def test_mlp_count(self):
        m = build_model(ModelSpec.from_name("mlp:64,32", 5, input_dim=8))
        assert m.num_parameters() == 8 * 64 + 64 + 64 * 32 + 32 + 32 * 5 + 5

    @pytest.mark.parametrize("depth", [7, 9, 12, 2])
    def test_invalid_depth(self, depth):
        with pytest.raises(ConfigError, match="6n"):
            ModelSpec("resnet", 10, depth=depth)

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            ModelSpec.from_name("vgg16", 10)


class TestForward:
    def test_init_is_deterministic(self):
        spec = ModelSpec("resnet", 4, depth=8, image_size=8)
        assert build_model(spec, 3).checksum() == build_model(spec, 3).checksum()
        assert build_model(spec, 3).checksum() != build_model(spec, 4).checksum()

    def test_zero_input_gives_finite_logits(self):
        m = build_model(ModelSpec("resnet", 10, depth=20), 0)
        out = m.forward(np.zeros((1, 3, 32, 32), np.float32), "eval").data
        assert out.shape == (1, 10) and np.all(np.isfinite(out))

    def test_eval_is_deterministic_and_stateless(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0)
        x = rng.standard_normal((5, 3, 8, 8)).astype(np.float32)
        before = m.checksum()
        a = m.forward(x, "eval").data
        b = m.forward(x, "eval").data
        assert a.tobytes() == b.tobytes()
        assert m.checksum() == before

    def test_train_and_eval_differ_on_shifted_batch(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0)
        x = (rng.standard_normal((6, 3, 8, 8)) * 3 + 2).astype(np.float32)
        y_eval = m.forward(x, "eval").data
        y_train = m.forward(x, "train").data
        assert not np.allclose(y_eval, y_train)

    def test_train_updates_running_stats(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0)
        before = m.buffers["stem.bn.running_mean"].copy()
        m.forward(rng.standard_normal((4, 3, 8, 8)).astype(np.float32) + 1, "train")
        assert not np.array_equal(before, m.buffers["stem.bn.running_mean"])

    def test_output_shapes(self, rng):
        m = build_model(ModelSpec("resnet", 7, depth=14, image_size=8), 0)
        assert m.forward(rng.standard_normal((2, 3, 8, 8)), "eval").shape == (2, 7)
        mlp = build_model(ModelSpec.from_name("mlp", 3, input_dim=5))
        assert mlp.forward(rng.standard_normal((4, 5)), "eval").shape == (4, 3)

    def test_float32_preserved(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0)
        out = m.forward(rng.standard_normal((2, 3, 8, 8)).astype(np.float32), "train")
        assert out.data.dtype == np.float32

    def test_bad_input_shape(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0)
        with pytest.raises(ContractError):
            m.forward(rng.standard_normal((2, 3, 16, 16)), "eval")
        with pytest.raises(ContractError):
            m.forward(rng.standard_normal((2, 3, 8, 8)), "predict")

    def test_residual_block_with_zero_weights_is_relu_identity(self, rng):
        m = build_model(ModelSpec("resnet", 4, depth=8, image_size=8), 0, dtype=np.float64)
        for name in ("stage0.block0.conv1", "stage0.block0.conv2"):
            m.params[name].data[...] = 0
        h = Tensor(rng.standard_normal((3, 16, 8, 8)))
        out = residual_block(m, "stage0.block0", h, training=False)
        np.testing.assert_array_equal(out.data, np.maximum(h.data, 0))


class TestState:
    def test_clone_frozen_is_read_only(self):
        m = build_model(ModelSpec.from_name("mlp", 3, input_dim=4))
        c = m.clone(frozen=True)
        assert c.checksum() == m.checksum()
        with pytest.raises(ValueError):
            c.params["fc0.weight"].data[0, 0] = 1.0
        m.params["fc0.weight"].data[0, 0] += 1.0
        assert c.checksum() != m.checksum()

    def test_load_arrays_round_trip(self):
        spec = ModelSpec("resnet", 4, depth=8, image_size=8)
        a, b = build_model(spec, 1), build_model(spec, 2)
        b.load_arrays(a.arrays())
        assert a.checksum() == b.checksum()

    def test_load_arrays_shape_mismatch(self):
        a = build_model(ModelSpec.from_name("mlp", 3, input_dim=4))
        b = build_model(ModelSpec.from_name("mlp", 3, input_dim=5))
        with pytest.raises(ContractError):
            b.load_arrays(a.arrays())

    def test_spec_dict_round_trip(self):
        spec = ModelSpec("resnet", 100, depth=32, image_size=16)
        assert ModelSpec.from_dict(spec.to_dict()) == spec
