import math

import numpy as np
import pytest

from snapdistill.autodiff import Tensor, check_gradients, grad
from snapdistill.errors import ContractError
from snapdistill.losses import ce_loss, kl_asymmetric, kl_divergence, kl_symmetric, one_hot, sd_loss

from conftest import py_softmax


def py_kl(p, q):
    return sum(a * (math.log(a) - math.log(b)) for a, b in zip(p, q) if a > 0)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert ce_loss(Tensor(np.zeros((3, 4))), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-15)

    def test_confident_correct_prediction(self):
        z = np.array([[60.0, 0.0, 0.0]])
        assert ce_loss(Tensor(z), [0]).item() < 1e-25

    def test_random_against_hand_scored(self, rng):
        z = rng.standard_normal((3, 5))
        y = [4, 0, 2]
        expected = -sum(math.log(py_softmax(list(z[i]))[y[i]]) for i in range(3)) / 3
        assert ce_loss(Tensor(z), y).item() == pytest.approx(expected, rel=1e-13)

    def test_one_hot_labels_equal_indices(self, rng):
        z = Tensor(rng.standard_normal((4, 3)))
        y = np.array([2, 0, 1, 1])
        assert ce_loss(z, one_hot(y, 3)).item() == ce_loss(z, y).item()

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            ce_loss(Tensor(np.zeros((2, 3))), [0, 3])


class TestKL:
    def test_identical_logits_at_unit_temperature(self, rng):
        z = rng.standard_normal((4, 6))
        assert abs(kl_asymmetric(z, Tensor(z), 1.0).item()) < 1e-15

    def test_two_class_closed_form(self):
        p = 1 / (1 + math.exp(-1.0))  # softmax([1, 0])[0]
        expected = p * math.log(2 * p) + (1 - p) * math.log(2 * (1 - p))
        got = kl_asymmetric(np.array([[2.0, 0.0]]), Tensor(np.array([[0.0, 0.0]])), 2.0).item()
        assert got == pytest.approx(expected, rel=1e-14)

    def test_against_python_oracle(self, rng):
        t, s = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
        expected = sum(py_kl(py_softmax(list(t[i]), 2.0), py_softmax(list(s[i]))) for i in range(3)) / 3
        assert kl_asymmetric(t, Tensor(s), 2.0).item() == pytest.approx(expected, rel=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(500):
            t, s = rng.standard_normal((2, 5)) * 4, rng.standard_normal((2, 5)) * 4
            T = float(rng.choice([1.0, 2.0, 3.0, 5.0]))
            assert kl_asymmetric(t, Tensor(s), T).item() >= -1e-14

    def test_asymmetric_differs_from_symmetric(self, rng):
        t, s = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        a = kl_asymmetric(t, Tensor(s), 2.0).item()
        b = kl_symmetric(t, Tensor(s), 2.0).item()
        assert abs(a - b) > 1e-6
        assert abs(kl_asymmetric(t, Tensor(s), 1.0).item() - kl_symmetric(t, Tensor(s), 1.0).item()) <= 1e-12

    def test_no_gradient_reaches_teacher(self, rng):
        t = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        s = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        gt, gs = grad(kl_asymmetric(t, s, 2.0), [t, s])
        assert not np.any(gt) and np.any(gs)

    def test_temperature_below_one_warns(self):
        with pytest.warns(UserWarning):
            kl_asymmetric(np.zeros((1, 2)), Tensor(np.zeros((1, 2))), 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            kl_divergence(np.zeros((2, 3)), Tensor(np.zeros((2, 4))))


class TestSDLoss:
    def test_degenerates_to_ce_bitwise(self, rng):
        z = Tensor(rng.standard_normal((5, 4)))
        y = rng.integers(0, 4, 5)
        total, br = sd_loss(z, y, None, (1.0, 0.0))
        assert total.data.tobytes() == ce_loss(z, y).data.tobytes()
        assert br.kl_term == 0.0

    def test_teacher_equal_student_still_positive_kl(self, rng):
        z = rng.standard_normal((4, 5))
        y = np.array([0, 1, 2, 3])
        total, br = sd_loss(Tensor(z), y, z, (1.5, 1.0), 2.0)
        ce = ce_loss(Tensor(z), y).item()
        kl = kl_asymmetric(z, Tensor(z), 2.0).item()
        assert kl > 0
        assert br.total == pytest.approx(1.5 * ce + kl, abs=1e-12)
        assert br.total > 1.5 * ce

    def test_breakdown_identity(self, rng):
        for _ in range(50):
            z, t = rng.standard_normal((3, 6)), rng.standard_normal((3, 6))
            ls, lt = rng.uniform(0.5, 2), rng.uniform(0.1, 2)
            _, br = sd_loss(Tensor(z), rng.integers(0, 6, 3), t, (ls, lt), 3.0)
            assert abs(br.total - (br.lambda_s * br.ce_term + br.lambda_t * br.kl_term)) < 1e-9

    def test_gradient_is_weighted_sum(self, rng):
        z, t = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        y = np.array([1, 2, 3, 4])
        s = Tensor(z, requires_grad=True)
        (g,) = grad(sd_loss(s, y, t, (1.5, 1.0), 2.0)[0], [s])
        s1 = Tensor(z, requires_grad=True)
        (gce,) = grad(ce_loss(s1, y), [s1])
        s2 = Tensor(z, requires_grad=True)
        (gkl,) = grad(kl_asymmetric(t, s2, 2.0), [s2])
        np.testing.assert_allclose(g, 1.5 * gce + gkl, rtol=1e-12, atol=1e-15)
        f = lambda x: sd_loss(x, y, t, (1.5, 1.0), 2.0)[0]  # noqa: E731
        assert check_gradients(f, z) < 1e-4

    def test_kl_gradient_scales_with_lambda_t(self, rng):
        z, t = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        y = np.array([0, 0, 1, 1])
        s = Tensor(z, requires_grad=True)
        (gce,) = grad(ce_loss(s, y), [s])

        def kl_part(lt):
            x = Tensor(z, requires_grad=True)
            (g,) = grad(sd_loss(x, y, t, (1.0, lt), 2.0)[0], [x])
            return g - gce

        np.testing.assert_allclose(kl_part(2.0), 4.0 * kl_part(0.5), rtol=1e-10, atol=1e-15)

    def test_two_model_loss_is_recovered(self, rng):
        # fixed external teacher and constant weights: mean over the batch of
        # lambda_S * (-y^T ln f_student) + lambda_T * KL(teacher || student)
        z, t = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        y = [3, 1, 0]
        lS, lT, T = 0.7, 1.3, 1.0
        per = []
        for i in range(3):
            q = py_softmax(list(z[i]))
            per.append(lS * -math.log(q[y[i]]) + lT * py_kl(py_softmax(list(t[i]), T), q))
        total, _ = sd_loss(Tensor(z), y, t, (lS, lT), T)
        assert total.item() == pytest.approx(sum(per) / 3, rel=1e-12)

    def test_contracts(self):
        z = Tensor(np.zeros((2, 3)))
        with pytest.raises(ContractError):
            sd_loss(z, [0, 1], None, (1.5, 1.0), 2.0)
        with pytest.raises(ContractError):
            sd_loss(z, [0, 1], np.zeros((2, 3)), (1.0, 0.0), 2.0)
