import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bicompress360.ensemble_decoder import EB, HDB, VDB, BranchOutputs
from bicompress360.objective import (ObjectiveConfig, ScheduleConfig,
                                     class_weights, loss_ce, loss_kl, loss_l2,
                                     poly_lr, total_loss)
from bicompress360.pano_data import IGNORE


class TestClassWeights:
    def test_equal_frequencies(self):
        labels = np.array([[0, 0, 1, 1]])
        w = class_weights([labels], 2)
        assert torch.allclose(w, torch.tensor([1.0, 1.0], dtype=w.dtype))

    def test_skewed_frequencies(self):
        labels = np.array([[0, 0, 0, 1]])
        w = class_weights([labels], 2)
        assert torch.allclose(w, torch.tensor([0.5 / 0.75, 0.5 / 0.25], dtype=w.dtype))

    def test_absent_class_gets_max_weight(self):
        labels = np.array([[0, 0, 0, 1]])
        w = class_weights([labels], 3)
        assert w[2] == w[:2].max()

    def test_strictly_positive(self):
        labels = np.array([[0, 1, 2, 2, 2, 1]])
        assert (class_weights([labels], 4) > 0).all()

    def test_ignore_excluded(self):
        labels = np.array([[0, 1, IGNORE, IGNORE]])
        w = class_weights([labels], 2)
        assert torch.allclose(w, torch.tensor([1.0, 1.0], dtype=w.dtype))

    def test_all_ignore_rejected(self):
        labels = np.full((2, 2), IGNORE)
        with pytest.raises(ValueError):
            class_weights([labels], 2)


class TestLossCe:
    def test_perfect_prediction_near_zero(self):
        labels = torch.randint(0, 13, (8, 16))
        logits = torch.zeros(13, 8, 16)
        logits.scatter_(0, labels.unsqueeze(0), 20.0)
        assert loss_ce(logits, labels) < 1e-4

    def test_uniform_logits_log13(self):
        logits = torch.zeros(13, 4, 8)
        labels = torch.randint(0, 13, (4, 8))
        assert abs(loss_ce(logits, labels).item() - math.log(13)) < 1e-6

    def test_all_ignore_rejected(self):
        with pytest.raises(ValueError):
            loss_ce(torch.rand(3, 2, 2), torch.full((2, 2), IGNORE))

    def test_weight_normalized_mean(self):
        # two pixels of different classes; weighted mean = sum(w*nll)/sum(w)
        logits = torch.tensor([[[2.0, 0.0]], [[0.0, 1.0]]])  # C=2,H=1,W=2
        labels = torch.tensor([[0, 1]])
        w = torch.tensor([3.0, 1.0])
        lsm = torch.log_softmax(logits, dim=0)
        want = (3 * -lsm[0, 0, 0] + 1 * -lsm[1, 0, 1]) / 4
        assert torch.allclose(loss_ce(logits, labels, w), want)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_ce(torch.rand(3, 2, 2), torch.zeros(4, 4, dtype=torch.long))


class TestLossKl:
    def test_identical_distributions(self):
        logits = torch.rand(5, 4, 4)
        assert loss_kl(logits, logits).abs() < 1e-9

    def test_one_hot_teacher_vs_uniform_student(self):
        teacher = torch.tensor([[[60.0]], [[0.0]]])
        student = torch.zeros(2, 1, 1)
        assert abs(loss_kl(student, teacher).item() - math.log(2)) < 1e-4

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_non_negative(self, seed):
        g = torch.Generator().manual_seed(seed)
        s = torch.randn(4, 3, 5, generator=g)
        t = torch.randn(4, 3, 5, generator=g)
        assert loss_kl(s, t) >= 0

    def test_ignore_mask_applied(self):
        s = torch.randn(3, 2, 2)
        t = torch.randn(3, 2, 2)
        mask = torch.tensor([[True, True], [True, False]])
        p_t = torch.softmax(t, 0)
        p_s = torch.softmax(s, 0)
        want = (p_t[:, 1, 1] * (p_t[:, 1, 1].log() - p_s[:, 1, 1].log())).sum()
        assert torch.allclose(loss_kl(s, t, mask), want)

    def test_teacher_detached(self):
        t = torch.randn(3, 2, 2, requires_grad=True)
        s = torch.randn(3, 2, 2, requires_grad=True)
        loss_kl(s, t).backward()
        assert t.grad is None
        assert s.grad is not None


class TestLossL2:
    def test_identical(self):
        f = torch.rand(4, 3, 3)
        assert loss_l2(f, f) == 0

    def test_unit_offset(self):
        f = torch.rand(4, 3, 3)
        assert torch.allclose(loss_l2(f + 1, f), torch.tensor(1.0))

    def test_mean_normalization(self):
        s = torch.tensor([1.0, 2.0])
        t = torch.tensor([0.0, 0.0])
        assert loss_l2(s, t).item() == pytest.approx(2.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_l2(torch.rand(2, 3), torch.rand(3, 2))


def _outputs(logits, features):
    return {b: BranchOutputs(b, features[b], logits[b]) for b in (HDB, VDB, EB)}


def _random_outputs(seed=0, n_cls=4, h=4, w=8, requires_grad=()):
    torch.manual_seed(seed)
    logits = {}
    feats = {}
    for b in (HDB, VDB, EB):
        logits[b] = torch.randn(n_cls, h, w, requires_grad=b in requires_grad)
        feats[b] = torch.randn(3, h, w, requires_grad=b in requires_grad)
    return _outputs(logits, feats)


class TestTotalLoss:
    def test_zero_weights_reduce_to_teacher_ce(self):
        outputs = _random_outputs()
        labels = torch.randint(0, 4, (4, 8))
        cfg = ObjectiveConfig(alpha=0, beta=0, gamma=0)
        report = total_loss(outputs, labels, cfg)
        assert float(report.total) == pytest.approx(
            loss_ce(outputs[EB].logits, labels).item())

    def test_identical_branches(self):
        torch.manual_seed(1)
        logits = torch.randn(4, 4, 8)
        feat = torch.randn(3, 4, 8)
        outputs = _outputs({b: logits for b in (HDB, VDB, EB)},
                           {b: feat for b in (HDB, VDB, EB)})
        labels = torch.randint(0, 4, (4, 8))
        cfg = ObjectiveConfig(alpha=0.7, beta=0.3, gamma=0.003)
        report = total_loss(outputs, labels, cfg)
        ce = loss_ce(logits, labels).item()
        assert all(v < 1e-9 for v in report.kl.values())
        assert all(v == 0 for v in report.l2.values())
        assert float(report.total) == pytest.approx((1 + 2 * 0.7) * ce, rel=1e-6)

    def test_total_equals_base_plus_distill(self):
        outputs = _random_outputs(seed=5)
        labels = torch.randint(0, 4, (4, 8))
        report = total_loss(outputs, labels, ObjectiveConfig())
        assert float(report.total) == pytest.approx(report.base + report.distill, rel=1e-9)

    def test_teacher_detached_in_distillation(self):
        outputs = _random_outputs(seed=2, requires_grad=(HDB, VDB, EB))
        labels = torch.randint(0, 4, (4, 8))
        # distillation-only loss: drop CE by zeroing alpha and subtracting base
        cfg = ObjectiveConfig(alpha=0.0, beta=0.3, gamma=0.003)
        report = total_loss(outputs, labels, cfg)
        distill_only = report.total - loss_ce(outputs[EB].logits, labels)
        distill_only.backward()
        assert outputs[EB].logits.grad is None or outputs[EB].logits.grad.abs().max() == 0
        assert outputs[EB].bottleneck_feature.grad is None \
            or outputs[EB].bottleneck_feature.grad.abs().max() == 0
        assert outputs[HDB].logits.grad.abs().max() > 0

    def test_missing_branch_rejected(self):
        outputs = _random_outputs()
        del outputs[VDB]
        with pytest.raises(ValueError, match="VDB"):
            total_loss(outputs, torch.zeros(4, 8, dtype=torch.long), ObjectiveConfig())

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            ObjectiveConfig(alpha=-0.1)


class TestGradientChecks:
    def _fd_check(self, fn, x, eps=1e-6):
        x = x.detach().clone().requires_grad_(True)
        fn(x).backward()
        grad = x.grad.reshape(-1)
        flat = x.detach().reshape(-1)
        for k in range(0, flat.numel(), max(1, flat.numel() // 6)):
            with torch.no_grad():
                flat[k] += eps
                up = fn(x).item()
                flat[k] -= 2 * eps
                down = fn(x).item()
                flat[k] += eps
            fd = (up - down) / (2 * eps)
            rel = abs(fd - grad[k].item()) / max(abs(fd), abs(grad[k].item()), 1e-10)
            assert rel < 1e-4, (k, fd, grad[k].item())

    def test_ce_gradient(self):
        torch.manual_seed(0)
        labels = torch.randint(0, 2, (4, 4))
        w = torch.rand(2, dtype=torch.float64) + 0.5
        self._fd_check(lambda x: loss_ce(x, labels, w),
                       torch.randn(2, 4, 4, dtype=torch.float64))

    def test_kl_gradient(self):
        torch.manual_seed(1)
        teacher = torch.randn(2, 4, 4, dtype=torch.float64)
        self._fd_check(lambda x: loss_kl(x, teacher),
                       torch.randn(2, 4, 4, dtype=torch.float64))

    def test_l2_gradient(self):
        torch.manual_seed(2)
        teacher = torch.randn(2, 4, 4, dtype=torch.float64)
        self._fd_check(lambda x: loss_l2(x, teacher),
                       torch.randn(2, 4, 4, dtype=torch.float64))


class TestPolyLr:
    def test_start(self):
        assert poly_lr(ScheduleConfig(1e-3, 300), 0) == 1e-3

    def test_end(self):
        assert poly_lr(ScheduleConfig(1e-3, 300), 300) == 0

    def test_midpoint(self):
        got = poly_lr(ScheduleConfig(1e-3, 300), 150)
        assert got == pytest.approx(1e-3 * 0.5 ** 0.9, abs=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            poly_lr(ScheduleConfig(1e-3, 300), 301)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ScheduleConfig(0.0, 300)
