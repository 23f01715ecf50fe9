"""The four training objectives and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    div,
    exp,
    log,
    mul,
    power,
    reduce_mean,
    reduce_sum,
    scale,
    sub,
)
from .data import Task
from .model import LatentPair, ModelOutput

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    kl: float = 1.0
    rec: float = 1.0
    cos: float = 1.0
    cls: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of each term plus their weighted total."""

    kl: float
    rec: float
    cos: float
    cls: float
    total: float

    def as_dict(self) -> dict:
        return {
            "kl": self.kl,
            "rec": self.rec,
            "cos": self.cos,
            "cls": self.cls,
            "total": self.total,
        }


def kl_loss(pairs: Sequence[LatentPair]) -> Tensor:
    """Closed-form divergence from a standard normal, averaged per
    latent coordinate within each branch and summed across branches."""
    total: Tensor | None = None
    for pair in pairs:
        dev = add(mul(pair.mu, pair.mu), exp(pair.logvar))
        dev = sub(sub(dev, 1.0), pair.logvar)
        term = scale(reduce_mean(dev), 0.5)
        total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("kl_loss needs at least one latent pair")
    return total


def rec_loss(sc_recon: Tensor, fc_recon: Tensor, sc: np.ndarray, fc: np.ndarray) -> Tensor:
    """Per-entry mean squared reconstruction error, summed over modalities."""
    d1 = sub(sc_recon, Tensor(sc))
    d2 = sub(fc_recon, Tensor(fc))
    return add(reduce_mean(mul(d1, d1)), reduce_mean(mul(d2, d2)))


def cos_loss(z_su: Tensor, z_fu: Tensor) -> Tensor:
    """Cosine similarity of the flattened universal representations.

    Defined as 0 when either representation is exactly zero (no gradient
    flows in that case).
    """
    sq_a = reduce_sum(mul(z_su, z_su))
    sq_b = reduce_sum(mul(z_fu, z_fu))
    if float(sq_a.value) == 0.0 or float(sq_b.value) == 0.0:
        return Tensor(0.0)
    dot = reduce_sum(mul(z_su, z_fu))
    return div(dot, mul(power(sq_a, 0.5), power(sq_b, 0.5)))


def cls_loss(probs: Tensor, label: str, task: Task) -> Tensor:
    """Cross-entropy against the one-hot task label, with the log argument
    floored at 1e-12."""
    y = task.one_hot(label).reshape(probs.value.shape)
    return scale(reduce_sum(mul(Tensor(y), log(probs, floor=LOG_FLOOR))), -1.0)


def total_loss(
    output: ModelOutput,
    sc: np.ndarray,
    fc: np.ndarray,
    label: str,
    task: Task,
    weights: LossWeights = LossWeights(),
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four objectives for one subject."""
    kl = kl_loss(output.pairs)
    rec = rec_loss(output.sc_recon, output.fc_recon, sc, fc)
    cos = cos_loss(output.z_su, output.z_fu)
    cls = cls_loss(output.probs, label, task)
    total = add(
        add(add(scale(kl, weights.kl), scale(rec, weights.rec)), scale(cos, weights.cos)),
        scale(cls, weights.cls),
    )
    breakdown = LossBreakdown(
        kl=float(kl.value),
        rec=float(rec.value),
        cos=float(cos.value),
        cls=float(cls.value),
        total=float(total.value),
    )
    return total, breakdown
