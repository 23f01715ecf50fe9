"""End-to-end gradient verification against central finite differences.

Runs the full training loss (all four terms, sampling included) on one
synthetic subject at toy scale and compares every analytic parameter
gradient coordinate with (f(x+h) - f(x-h)) / 2h. The latent draw is
re-seeded identically for every evaluation so the loss is a
deterministic function of the parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .data import Task
from .losses import LossWeights, total_loss
from .model import Model, ModelConfig, prepare_subject
from .synthetic import generate_synthetic_cohort

_SAMPLING_SEED = 12345


@dataclass(frozen=True)
class ParamCheck:
    name: str
    worst_rel_err: float
    worst_coord: tuple[int, ...]
    passed: bool


@dataclass(frozen=True)
class GradCheckResult:
    passed: bool
    tolerance: float
    checks: tuple[ParamCheck, ...]
    seconds: float

    @property
    def failures(self) -> tuple[ParamCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)


def run_full_check(
    n_rois: int = 6,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    separate_universal: bool = False,
    corrupt_param: str | None = None,
) -> GradCheckResult:
    """Check every parameter coordinate of a toy-sized model.

    `corrupt_param` deliberately perturbs one parameter's analytic
    gradient before comparison; the result must then fail and name it.
    """
    started = time.perf_counter()
    config = ModelConfig(
        n_rois=n_rois,
        hidden1=8,
        hidden2=4,
        latent_dim=2,
        clf_hidden=4,
        clf_embed=2,
        separate_universal=separate_universal,
    )
    cohort = generate_synthetic_cohort(seed=seed, n_per_class=2, n_rois=n_rois, signal=0.3)
    prep = prepare_subject(cohort.subjects[0])
    task = Task.NC_EMCI
    weights = LossWeights()
    model = Model.create(config, seed)

    def loss_value() -> float:
        rng = np.random.default_rng(_SAMPLING_SEED)
        output = model.forward(prep, rng=rng, train_mode=True)
        total, _ = total_loss(output, prep.sc, prep.fc, prep.label, task, weights)
        return float(total.value)

    with Tape() as tape:
        rng = np.random.default_rng(_SAMPLING_SEED)
        output = model.forward(prep, rng=rng, train_mode=True)
        total, _ = total_loss(output, prep.sc, prep.fc, prep.label, task, weights)
    analytic = model.store.grads_by_name(tape.backward(total))
    if corrupt_param is not None:
        analytic[corrupt_param] = analytic[corrupt_param] + 0.5

    checks = []
    for name in model.store.names():
        theta = model.store.value(name)
        grads = analytic[name]
        worst = 0.0
        worst_coord: tuple[int, ...] = ()
        for coord in np.ndindex(theta.shape):
            original = theta[coord]
            theta[coord] = original + step
            f_plus = loss_value()
            theta[coord] = original - step
            f_minus = loss_value()
            theta[coord] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = _relative_error(float(grads[coord]), numeric)
            if err > worst:
                worst = err
                worst_coord = coord
        checks.append(
            ParamCheck(
                name=name,
                worst_rel_err=worst,
                worst_coord=worst_coord,
                passed=worst < tolerance,
            )
        )
    elapsed = time.perf_counter() - started
    return GradCheckResult(
        passed=all(c.passed for c in checks),
        tolerance=tolerance,
        checks=tuple(checks),
        seconds=elapsed,
    )
