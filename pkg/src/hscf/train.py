"""Training loop: adaptive-moment optimizer with decoupled weight decay,
seeded batching, and per-epoch reporting."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .analysis import ConfusionCounts, EvalResult, Metrics, evaluate_task
from .autodiff import Tape
from .data import Cohort, Task, split_cohort
from .errors import ShapeError, ValidationError
from .losses import LossBreakdown, LossWeights, total_loss
from .model import Model, ModelConfig, PreparedSubject, prepare_subject
from .params import ParameterStore


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run, JSON round-trippable."""

    task: str = "nc-emci"
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    kl_weight: float = 1.0
    rec_weight: float = 1.0
    cos_weight: float = 1.0
    cls_weight: float = 1.0
    seed: int = 0
    train_fraction: float = 0.8
    eval_every: int = 25
    threads: int = 1
    hidden1: int = 64
    hidden2: int = 32
    latent_dim: int = 16
    clf_hidden: int = 32
    clf_embed: int = 16
    separate_universal: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.threads < 1:
            raise ValidationError(f"threads must be positive, got {self.threads}")
        if self.eval_every < 0:
            raise ValidationError(f"eval_every must be >= 0, got {self.eval_every}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            kl=self.kl_weight, rec=self.rec_weight, cos=self.cos_weight, cls=self.cls_weight
        )

    def model_config(self, n_rois: int) -> ModelConfig:
        return ModelConfig(
            n_rois=n_rois,
            hidden1=self.hidden1,
            hidden2=self.hidden2,
            latent_dim=self.latent_dim,
            clf_hidden=self.clf_hidden,
            clf_embed=self.clf_embed,
            separate_universal=self.separate_universal,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ValidationError(f"malformed config {path}: {err}") from None
        return cls.from_dict(raw)

    def override(self, **kwargs) -> "TrainConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: TrainConfig) -> "AdamState":
        return cls(
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            weight_decay=config.weight_decay,
        )


def adam_step(state: AdamState, store: ParameterStore, grads: dict[str, np.ndarray]) -> None:
    """One optimizer step; weight decay is decoupled from the moments."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in store.names():
        g = grads.get(name)
        if g is None:
            raise ValidationError(f"missing gradient for parameter '{name}'")
        theta = store.value(name)
        if g.shape != theta.shape:
            raise ShapeError(
                f"gradient for '{name}' has shape {g.shape}, parameter is {theta.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(theta)
            state.m[name] = m
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        store.assign(
            name,
            theta - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * theta),
        )


def _subject_rng(seed: int, epoch: int, position: int) -> np.random.Generator:
    # spawn key rather than arithmetic on the seed: deterministic and
    # collision-free regardless of thread scheduling
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2, epoch, position)))


def _subject_pass(
    model: Model,
    prep: PreparedSubject,
    task: Task,
    weights: LossWeights,
    rng: np.random.Generator,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    with Tape() as tape:
        output = model.forward(prep, rng=rng, train_mode=True)
        total, breakdown = total_loss(output, prep.sc, prep.fc, prep.label, task, weights)
    grads = tape.backward(total)
    return breakdown, model.store.grads_by_name(grads)


def train_epoch(
    model: Model,
    state: AdamState,
    prepared: list[PreparedSubject],
    config: TrainConfig,
    task: Task,
    epoch: int,
    shuffle_rng: np.random.Generator,
    pool: ThreadPoolExecutor | None = None,
) -> LossBreakdown:
    """One shuffled pass; each batch applies the mean of its subject
    gradients in a single optimizer step. Returns the epoch-mean losses."""
    order = shuffle_rng.permutation(len(prepared))
    weights = config.loss_weights
    sums = {"kl": 0.0, "rec": 0.0, "cos": 0.0, "cls": 0.0, "total": 0.0}
    for start in range(0, len(order), config.batch_size):
        batch = order[start : start + config.batch_size]
        jobs = [
            (prepared[i], _subject_rng(config.seed, epoch, start + slot))
            for slot, i in enumerate(batch)
        ]
        if pool is not None:
            results = list(
                pool.map(lambda job: _subject_pass(model, job[0], task, weights, job[1]), jobs)
            )
        else:
            results = [_subject_pass(model, prep, task, weights, rng) for prep, rng in jobs]
        grad_sum: dict[str, np.ndarray] = {}
        for breakdown, grads in results:
            for key, value in breakdown.as_dict().items():
                sums[key] += value
            for name, g in grads.items():
                held = grad_sum.get(name)
                grad_sum[name] = g.copy() if held is None else held + g
        scale = 1.0 / len(results)
        adam_step(state, model.store, {name: g * scale for name, g in grad_sum.items()})
    n = len(prepared)
    return LossBreakdown(
        kl=sums["kl"] / n,
        rec=sums["rec"] / n,
        cos=sums["cos"] / n,
        cls=sums["cls"] / n,
        total=sums["total"] / n,
    )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    seconds: float
    metrics: Metrics | None = None
    counts: ConfusionCounts | None = None

    def as_dict(self) -> dict:
        row = {"epoch": self.epoch, **self.losses.as_dict(), "seconds": self.seconds}
        if self.metrics is not None and self.counts is not None:
            row["eval"] = {**self.metrics.as_dict(), "counts": self.counts.as_dict()}
        else:
            row["eval"] = None
        return row


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        if not self.records:
            raise ValidationError("empty training report")
        return self.records[-1]

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for record in self.records:
                fh.write(json.dumps(record.as_dict()))
                fh.write("\n")
        return path

    def write_csv(self, path: str | Path) -> Path:
        import csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "kl", "rec", "cos", "cls", "total", "seconds", "acc"])
            for r in self.records:
                acc = r.metrics.acc if r.metrics is not None else None
                writer.writerow(
                    [r.epoch, repr(r.losses.kl), repr(r.losses.rec), repr(r.losses.cos),
                     repr(r.losses.cls), repr(r.losses.total), f"{r.seconds:.3f}",
                     "" if acc is None else repr(acc)]
                )
        return path


def load_report_jsonl(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class FitResult:
    model: Model
    report: TrainReport
    train_cohort: Cohort
    test_cohort: Cohort | None
    final_eval: EvalResult | None


def fit(config: TrainConfig, cohort: Cohort, log=None) -> FitResult:
    """Train from fresh weights on a stratified split of the cohort.

    Held-out metrics are recorded every `eval_every` epochs (0 disables
    mid-run snapshots) and always at the final epoch when a held-out
    split exists. Identical config and cohort reproduce identical
    weights; wall-clock fields are the only non-deterministic output.
    """
    task = Task.from_string(config.task)
    train_cohort, test_cohort = split_cohort(cohort, task, config.train_fraction, config.seed)
    model = Model.create(config.model_config(cohort.n_rois), config.seed)
    state = AdamState.for_config(config)
    prepared = [prepare_subject(s) for s in train_cohort.subjects]
    prepared_test = (
        [prepare_subject(s) for s in test_cohort.subjects] if test_cohort is not None else None
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    report = TrainReport()
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    final_eval: EvalResult | None = None
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            losses = train_epoch(
                model, state, prepared, config, task, epoch, shuffle_rng, pool=pool
            )
            elapsed = time.perf_counter() - started
            snapshot = None
            due = config.eval_every > 0 and epoch % config.eval_every == 0
            if (due or epoch == config.epochs) and prepared_test is not None:
                snapshot = evaluate_task(
                    model, test_cohort, task, threads=config.threads, prepared=prepared_test
                )
                if epoch == config.epochs:
                    final_eval = snapshot
            record = EpochRecord(
                epoch=epoch,
                losses=losses,
                seconds=elapsed,
                metrics=snapshot.metrics if snapshot else None,
                counts=snapshot.counts if snapshot else None,
            )
            report.records.append(record)
            if log is not None:
                log(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return FitResult(
        model=model,
        report=report,
        train_cohort=train_cohort,
        test_cohort=test_cohort,
        final_eval=final_eval,
    )
