"""Disentangling graph-VAE with hierarchical latent fusion.

Four GCN encoders ("separators") split each subject's structural and
functional connectivity into modality-specific and shared ("universal")
latent node representations; by default one universal encoder serves
both modalities. Inner-product decoders reconstruct each modality, a
three-stage fusion ladder merges the latents into one generated
connectivity matrix, and a small GCN head classifies it.

Parameter name prefixes used in checkpoints:
    sep_ss / sep_su / sep_ff / sep_fu   separator weights
        (ss structural-specific, su universal, ff functional-specific,
         fu functional universal, present only with separate encoders)
    rec_ss / rec_su / rec_ff / rec_fu   reconstructor weights
    hrf.clm_s / hrf.clm_f / hrf.clm_out fusion perceptrons
    clf.*                               classifier
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat_cols,
    exp,
    matmul,
    mul,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    scale,
    sigmoid,
    softmax,
    transpose,
)
from .data import Subject, build_node_features, normalize_adjacency
from .errors import ShapeError, ValidationError
from .params import ParameterStore, glorot_uniform

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; defaults match the full 90-ROI setup."""

    n_rois: int = 90
    hidden1: int = 64
    hidden2: int = 32
    latent_dim: int = 16
    clf_hidden: int = 32
    clf_embed: int = 16
    separate_universal: bool = False

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        missing = known - set(kwargs)
        if missing:
            raise ValidationError(f"model config lacks fields: {sorted(missing)}")
        return cls(**kwargs)


@dataclass
class LatentPair:
    """Posterior parameters of one latent branch (per-node mean, log-variance)."""

    mu: Tensor
    logvar: Tensor


@dataclass
class PreparedSubject:
    """Per-subject constants reused across epochs.

    `ax1`/`ax2` cache the propagation of node features through each
    normalized adjacency so the first encoder layer skips one matmul.
    """

    subject_id: str
    label: str
    sc: np.ndarray
    fc: np.ndarray
    a1_hat: Tensor
    a2_hat: Tensor
    ax1: Tensor
    ax2: Tensor
    x: Tensor


@dataclass
class ModelOutput:
    """Every intermediate a loss or analysis step needs."""

    pair_ss: LatentPair
    pair_su: LatentPair
    pair_ff: LatentPair
    pair_fu: LatentPair
    z_ss: Tensor
    z_su: Tensor
    z_ff: Tensor
    z_fu: Tensor
    a_s1: Tensor
    a_s2: Tensor
    a_f1: Tensor
    a_f2: Tensor
    sc_recon: Tensor
    fc_recon: Tensor
    fused: Tensor
    probs: Tensor

    @property
    def pairs(self) -> tuple[LatentPair, LatentPair, LatentPair, LatentPair]:
        return (self.pair_ss, self.pair_su, self.pair_ff, self.pair_fu)


def gcn_layer(a_hat: Tensor, h: Tensor, w: Tensor, activate: bool) -> Tensor:
    """One graph convolution: (a_hat @ h) @ w, optionally through ReLU."""
    out = matmul(matmul(a_hat, h), w)
    return relu(out) if activate else out


def sample_latent(pair: LatentPair, rng: np.random.Generator | None, train_mode: bool) -> Tensor:
    """Reparameterized draw in train mode; the posterior mean otherwise."""
    if not train_mode:
        return pair.mu
    if rng is None:
        raise ValidationError("train-mode sampling needs a random generator")
    eps = Tensor(rng.standard_normal(pair.mu.value.shape))
    return add(pair.mu, mul(exp(scale(pair.logvar, 0.5)), eps))


def sym_normalize(a: Tensor) -> Tensor:
    """Differentiable form of the adjacency renormalization used on inputs."""
    n = a.value.shape[0]
    a_loop = add(a, Tensor(np.eye(n)))
    d = power(reduce_sum(a_loop, axis=1, keepdims=True), -0.5)
    return mul(mul(d, a_loop), transpose(d))


def _symmetrized_gram(h: Tensor) -> Tensor:
    s = matmul(h, transpose(h))
    return scale(add(s, transpose(s)), 0.5)


def prepare_subject(subject: Subject) -> PreparedSubject:
    a1 = normalize_adjacency(subject.sc)
    a2 = normalize_adjacency(subject.fc)
    x = build_node_features(subject.volumes).features
    return PreparedSubject(
        subject_id=subject.subject_id,
        label=subject.label,
        sc=subject.sc.weights,
        fc=subject.fc.weights,
        a1_hat=Tensor(a1),
        a2_hat=Tensor(a2),
        ax1=Tensor(a1 @ x),
        ax2=Tensor(a2 @ x),
        x=Tensor(x),
    )


def _separator_prefixes(config: ModelConfig) -> tuple[str, ...]:
    prefixes = ["sep_ss", "sep_su", "sep_ff"]
    if config.separate_universal:
        prefixes.append("sep_fu")
    return tuple(prefixes)


def build_parameters(config: ModelConfig, seed: int) -> ParameterStore:
    """Fresh weights: uniform variance-preserving matrices, zero biases."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    n, h1, h2, d = config.n_rois, config.hidden1, config.hidden2, config.latent_dim

    for prefix in _separator_prefixes(config):
        store.add(f"{prefix}.w1", glorot_uniform(rng, (n, h1), n, h1))
        store.add(f"{prefix}.w2", glorot_uniform(rng, (h1, h2), h1, h2))
        store.add(f"{prefix}.w_mu", glorot_uniform(rng, (h2, d), h2, d))
        store.add(f"{prefix}.w_logvar", glorot_uniform(rng, (h2, d), h2, d))
    for prefix in ("rec_ss", "rec_su", "rec_ff", "rec_fu"):
        store.add(f"{prefix}.w", glorot_uniform(rng, (d, d), d, d))
        store.add(f"{prefix}.b", np.zeros(d))
    for prefix in ("hrf.clm_s", "hrf.clm_f", "hrf.clm_out"):
        store.add(f"{prefix}.w1", glorot_uniform(rng, (2 * d, d), 2 * d, d))
        store.add(f"{prefix}.b1", np.zeros(d))
        store.add(f"{prefix}.w2", glorot_uniform(rng, (d, d), d, d))
        store.add(f"{prefix}.b2", np.zeros(d))
    ch, ce = config.clf_hidden, config.clf_embed
    store.add("clf.w1", glorot_uniform(rng, (n, ch), n, ch))
    store.add("clf.w2", glorot_uniform(rng, (ch, ce), ch, ce))
    store.add("clf.w_out", glorot_uniform(rng, (ce, 2), ce, 2))
    store.add("clf.b_out", np.zeros(2))
    return store


def expected_parameter_names(config: ModelConfig) -> list[str]:
    names = []
    for prefix in _separator_prefixes(config):
        names += [f"{prefix}.w1", f"{prefix}.w2", f"{prefix}.w_mu", f"{prefix}.w_logvar"]
    for prefix in ("rec_ss", "rec_su", "rec_ff", "rec_fu"):
        names += [f"{prefix}.w", f"{prefix}.b"]
    for prefix in ("hrf.clm_s", "hrf.clm_f", "hrf.clm_out"):
        names += [f"{prefix}.w1", f"{prefix}.b1", f"{prefix}.w2", f"{prefix}.b2"]
    names += ["clf.w1", "clf.w2", "clf.w_out", "clf.b_out"]
    return names


class Model:
    """Parameter store plus the forward graph built on top of it."""

    def __init__(self, config: ModelConfig, store: ParameterStore):
        self.config = config
        self.store = store
        self._offdiag_mask = Tensor(1.0 - np.eye(config.n_rois))

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "Model":
        return cls(config, build_parameters(config, seed))

    def _p(self, name: str) -> Tensor:
        return self.store.tensor(name)

    def separator(self, prefix: str, a_hat: Tensor, ax: Tensor) -> LatentPair:
        """Three-layer GCN encoder; the last layer splits into mean and
        log-variance heads and carries no activation."""
        h1 = relu(matmul(ax, self._p(f"{prefix}.w1")))
        h2 = relu(matmul(matmul(a_hat, h1), self._p(f"{prefix}.w2")))
        h3 = matmul(a_hat, h2)
        return LatentPair(
            mu=matmul(h3, self._p(f"{prefix}.w_mu")),
            logvar=matmul(h3, self._p(f"{prefix}.w_logvar")),
        )

    def reconstructor(self, prefix: str, z: Tensor) -> Tensor:
        """Per-node linear map followed by a sigmoid inner-product decoder."""
        h = add(matmul(z, self._p(f"{prefix}.w")), self._p(f"{prefix}.b"))
        return sigmoid(_symmetrized_gram(h))

    def _clm(self, prefix: str, left: Tensor, right: Tensor) -> Tensor:
        h = concat_cols(left, right)
        h = relu(add(matmul(h, self._p(f"{prefix}.w1")), self._p(f"{prefix}.b1")))
        return add(matmul(h, self._p(f"{prefix}.w2")), self._p(f"{prefix}.b2"))

    def fuse(self, z_ss: Tensor, z_su: Tensor, z_ff: Tensor, z_fu: Tensor) -> Tensor:
        """Three-stage fusion into one generated connectivity matrix."""
        p1 = scale(add(z_su, z_fu), 0.5)
        p2_s = self._clm("hrf.clm_s", p1, z_ss)
        p2_f = self._clm("hrf.clm_f", p1, z_ff)
        f = self._clm("hrf.clm_out", p2_s, p2_f)
        return sigmoid(_symmetrized_gram(f))

    def classify(self, fused: Tensor, x: Tensor) -> Tensor:
        """Two GCN layers over the generated matrix, mean-pool, dense softmax."""
        a = mul(fused, self._offdiag_mask)
        a_hat = sym_normalize(a)
        h1 = relu(matmul(a_hat, matmul(x, self._p("clf.w1"))))
        h2 = matmul(matmul(a_hat, h1), self._p("clf.w2"))
        pooled = reduce_mean(h2, axis=0, keepdims=True)
        logits = add(matmul(pooled, self._p("clf.w_out")), self._p("clf.b_out"))
        return softmax(logits)

    def forward(
        self,
        prep: PreparedSubject,
        rng: np.random.Generator | None = None,
        train_mode: bool = False,
    ) -> ModelOutput:
        if prep.x.value.shape[0] != self.config.n_rois:
            raise ShapeError(
                f"subject '{prep.subject_id}' has {prep.x.value.shape[0]} ROIs, "
                f"model expects {self.config.n_rois}"
            )
        fu_prefix = "sep_fu" if self.config.separate_universal else "sep_su"
        pair_ss = self.separator("sep_ss", prep.a1_hat, prep.ax1)
        pair_su = self.separator("sep_su", prep.a1_hat, prep.ax1)
        pair_ff = self.separator("sep_ff", prep.a2_hat, prep.ax2)
        pair_fu = self.separator(fu_prefix, prep.a2_hat, prep.ax2)

        z_ss = sample_latent(pair_ss, rng, train_mode)
        z_su = sample_latent(pair_su, rng, train_mode)
        z_ff = sample_latent(pair_ff, rng, train_mode)
        z_fu = sample_latent(pair_fu, rng, train_mode)

        a_s1 = self.reconstructor("rec_ss", z_ss)
        a_s2 = self.reconstructor("rec_su", z_su)
        a_f1 = self.reconstructor("rec_ff", z_ff)
        a_f2 = self.reconstructor("rec_fu", z_fu)
        sc_recon = scale(add(a_s1, a_s2), 0.5)
        fc_recon = scale(add(a_f1, a_f2), 0.5)

        fused = self.fuse(z_ss, z_su, z_ff, z_fu)
        probs = self.classify(fused, prep.x)
        return ModelOutput(
            pair_ss=pair_ss,
            pair_su=pair_su,
            pair_ff=pair_ff,
            pair_fu=pair_fu,
            z_ss=z_ss,
            z_su=z_su,
            z_ff=z_ff,
            z_fu=z_fu,
            a_s1=a_s1,
            a_s2=a_s2,
            a_f1=a_f1,
            a_f2=a_f2,
            sc_recon=sc_recon,
            fc_recon=fc_recon,
            fused=fused,
            probs=probs,
        )


def save_checkpoint(path: str | Path, model: Model, extra_config: dict | None = None) -> Path:
    """Write model weights and configuration as one JSON document.

    Floats are serialized with full round-trip precision, so saving the
    same weights always produces byte-identical files.
    """
    config = dict(model.config.to_dict())
    if extra_config:
        config.update(extra_config)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "params": model.store.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Read a checkpoint back; returns the model and its full config dict."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValidationError(f"malformed checkpoint {path}: {err}") from None
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint version {payload.get('version')!r} in {path}"
        )
    if "config" not in payload or "params" not in payload:
        raise ValidationError(f"checkpoint {path} lacks 'config' or 'params'")
    config = ModelConfig.from_dict(payload["config"])
    store = ParameterStore.from_state_dict(payload["params"])
    expected = expected_parameter_names(config)
    if store.names() != expected:
        missing = sorted(set(expected) - set(store.names()))
        surplus = sorted(set(store.names()) - set(expected))
        raise ValidationError(
            f"checkpoint parameters disagree with config (missing {missing}, surplus {surplus})"
        )
    return Model(config, store), payload["config"]
