"""Training objective: class-weighted cross-entropy for every branch,
teacher-to-student KL and feature L2 distillation, their weighted sum,
median-frequency class weights, and the poly learning-rate schedule.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .ensemble_decoder import EB, HDB, VDB
from .pano_data import IGNORE

PROB_FLOOR = 1e-12


@dataclass
class ObjectiveConfig:
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.003
    class_weights: torch.Tensor = None
    ignore_label: int = IGNORE

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.class_weights is not None:
            self.class_weights = torch.as_tensor(self.class_weights)
            if (self.class_weights <= 0).any():
                raise ValueError("class weights must be strictly positive")


@dataclass
class LossReport:
    ce: dict
    kl: dict
    l2: dict
    base: float
    distill: float
    total: torch.Tensor

    def as_dict(self):
        d = {f"ce_{k}": v for k, v in self.ce.items()}
        d.update({f"kl_{k}": v for k, v in self.kl.items()})
        d.update({f"l2_{k}": v for k, v in self.l2.items()})
        d.update(base=self.base, distill=self.distill,
                 total=float(self.total.detach()))
        return d


@dataclass
class ScheduleConfig:
    base_lr: float
    max_iter: int
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0 or self.max_iter <= 0:
            raise ValueError("base_lr and max_iter must be positive")


def class_weights(label_corpus, n_classes):
    """Median-frequency balancing: w_c = median(f) / f_c over present
    classes; absent classes get the max weight of the present ones."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for labels in label_corpus:
        arr = np.asarray(labels)
        valid = arr[arr != IGNORE]
        counts += np.bincount(valid.ravel(), minlength=n_classes)
    total = counts.sum()
    if total == 0:
        raise ValueError("label corpus contains no valid pixels")
    freq = counts / total
    present = freq > 0
    weights = np.zeros(n_classes)
    weights[present] = np.median(freq[present]) / freq[present]
    if (~present).any():
        weights[~present] = weights[present].max()
    return torch.from_numpy(weights)


def loss_ce(logits, labels, weights=None, ignore_label=IGNORE):
    """Weight-normalized cross-entropy over non-ignored pixels."""
    if logits.shape[-2:] != labels.shape[-2:]:
        raise ValueError("logits/labels spatial shape mismatch")
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    if labels.dim() == 2:
        labels = labels.unsqueeze(0)
    if (labels != ignore_label).sum() == 0:
        raise ValueError("no valid pixels to compute cross-entropy")
    if weights is not None:
        weights = weights.to(logits.dtype)
    return F.cross_entropy(logits, labels, weight=weights, ignore_index=ignore_label)


def loss_kl(student_logits, teacher_logits, ignore_mask=None):
    """Mean per-pixel KL(teacher || student) over the class axis.

    The teacher is detached; probabilities are floored before the log.
    ignore_mask is True at pixels to exclude.
    """
    if student_logits.shape != teacher_logits.shape:
        raise ValueError("student/teacher logit shape mismatch")
    p_t = torch.softmax(teacher_logits.detach(), dim=-3).clamp_min(PROB_FLOOR)
    p_s = torch.softmax(student_logits, dim=-3).clamp_min(PROB_FLOOR)
    kl = (p_t * (p_t.log() - p_s.log())).sum(dim=-3)
    if ignore_mask is not None:
        valid = ~ignore_mask.reshape(kl.shape)
        if valid.sum() == 0:
            return kl.sum() * 0.0
        return kl[valid].mean()
    return kl.mean()


def loss_l2(student_feature, teacher_feature):
    """Mean squared distance between student and detached teacher features."""
    if student_feature.shape != teacher_feature.shape:
        raise ValueError("feature shape mismatch")
    return ((student_feature - teacher_feature.detach()) ** 2).mean()


def total_loss(outputs, labels, config):
    """Combine per-branch losses per the self-distillation scheme.

    base = CE on the teacher (EB); distill = sum over students of
    alpha*CE + beta*KL(teacher||student) + gamma*L2(features).
    """
    for b in (HDB, VDB, EB):
        if b not in outputs:
            raise ValueError(f"missing branch {b}")
    w = config.class_weights
    teacher = outputs[EB]
    ignore_mask = labels == config.ignore_label
    ce = {b: loss_ce(outputs[b].logits, labels, w, config.ignore_label)
          for b in (HDB, VDB, EB)}
    kl = {}
    l2 = {}
    distill = ce[EB].new_zeros(())
    for b in (HDB, VDB):
        kl[b] = loss_kl(outputs[b].logits, teacher.logits, ignore_mask)
        l2[b] = loss_l2(outputs[b].bottleneck_feature, teacher.bottleneck_feature)
        distill = distill + config.alpha * ce[b] + config.beta * kl[b] + config.gamma * l2[b]
    base = ce[EB]
    total = base + distill
    base_f = float(base.detach())
    # derive the reported split from the realized total so that
    # total == base + distill holds exactly in float
    return LossReport(
        ce={b: float(v.detach()) for b, v in ce.items()},
        kl={b: float(v.detach()) for b, v in kl.items()},
        l2={b: float(v.detach()) for b, v in l2.items()},
        base=base_f, distill=float(total.detach()) - base_f, total=total)


def poly_lr(config, iteration):
    if not 0 <= iteration <= config.max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {config.max_iter}]")
    return config.base_lr * (1.0 - iteration / config.max_iter) ** config.power
