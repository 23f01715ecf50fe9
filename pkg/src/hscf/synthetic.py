"""Seeded synthetic cohort generator with planted stage-dependent edges.

Cohorts mimic the sparse, high-contrast texture of brain connectomes:
each node has one dominant connection, so degree stays low and the
normalized adjacency keeps per-row contrast high. Construction, with
every draw taken from one seeded generator in a fixed order so equal
seeds give byte-identical cohorts:

* the top 8 * per_set node indices are reserved for planted node pairs
  (see `planted_edge_sets`); each such node's only strong connection is
  its partner, so the planted edge dominates the pair's connectivity;
* the remaining low indices form consecutive partner pairs (i, i+1)
  with a strong 0.9 link; pairs are grouped into 4 contiguous
  communities with a weak 0.05 link between same-community nodes, so
  the graph has block structure on top of the pair matching;
* all other edges sit at a 0.005 floor;
* noise is multiplicative (edge = base * (1 + terms)), keeping weak
  edges weak: a cohort-level symmetric jitter (+-0.05) shared by both
  modalities (structural and functional matrices thereby share latent
  structure), a cohort-level +-0.05 pattern per modality, a +-0.06
  shared per-subject term, and +-0.04 per modality per subject;
* planted edges: four fixed sets whose base weight is 0.15 and which
  gain +signal in selected stages so that, in expectation, exactly the
  increased/decreased sets change between adjacent stages:

      set                 NC        EMCI      LMCI
      nc_emci_increased   0.15      +signal   +signal
      nc_emci_decreased   +signal   0.15      0.15
      emci_lmci_increased 0.15      0.15      +signal
      emci_lmci_decreased +signal   +signal   0.15

ROI volumes are drawn around an evenly spaced base in [1, 2] with +-0.2%
jitter, small enough that volume ranks are stable across subjects.
Stage-dependent atrophy shrinks planted-pair node volumes by a fraction
0.12 * signal: nodes of the NC/EMCI edge sets shrink from EMCI onward,
nodes of the EMCI/LMCI sets only at LMCI. The shift is large enough to
reorder volume ranks, so one-hot node features carry a stage signature
alongside the edge-level one; signal 0 disables both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import STAGES, Cohort, ConnectivityMatrix, RoiAtlas, Subject
from .errors import ValidationError

_PARTNER_WEIGHT = 0.95
_COMMUNITY_WEIGHT = 0.03
_BASELINE_WEIGHT = 0.002
_PLANTED_BASE = 0.15
_COHORT_JITTER = 0.0125
_MODALITY_PATTERN = 0.0125
_SHARED_NOISE = 0.015
_MODALITY_NOISE = 0.01
_N_COMMUNITIES = 4
_ATROPHY_MAX = 0.12

Edge = tuple[int, int]


@dataclass(frozen=True)
class PlantedEdges:
    """The four documented edge sets carrying stage-dependent signal."""

    nc_emci_increased: tuple[Edge, ...]
    nc_emci_decreased: tuple[Edge, ...]
    emci_lmci_increased: tuple[Edge, ...]
    emci_lmci_decreased: tuple[Edge, ...]

    def all_edges(self) -> tuple[Edge, ...]:
        return (
            self.nc_emci_increased
            + self.nc_emci_decreased
            + self.emci_lmci_increased
            + self.emci_lmci_decreased
        )


def planted_edge_sets(n_rois: int) -> PlantedEdges:
    """Fixed planted edge sets for a given ROI count.

    Uses 5 edges per set when the node count allows four node-disjoint
    sets (n_rois >= 40), fewer on small graphs. Edges pair consecutive
    high node indices, outside the community region.
    """
    if n_rois < 6:
        raise ValidationError(f"need at least 6 ROIs, got {n_rois}")
    per_set = min(5, max(1, n_rois // 8))
    need = 4 * per_set
    if 2 * need <= n_rois:
        start = n_rois - 2 * need
        pairs = [(start + 2 * m, start + 2 * m + 1) for m in range(need)]
    else:
        # small graphs: node-disjoint pairs first, then offset pairs
        pairs = [(2 * m, 2 * m + 1) for m in range(n_rois // 2)]
        pairs += [(2 * m + 1, 2 * m + 2) for m in range((n_rois - 1) // 2)]
        pairs = pairs[:need]
    sets = [tuple(pairs[i * per_set : (i + 1) * per_set]) for i in range(4)]
    return PlantedEdges(*sets)


def _community_base(n_rois: int, edges: PlantedEdges) -> np.ndarray:
    """Weak-floor matrix with paired-node communities and planted slots."""
    base = np.full((n_rois, n_rois), _BASELINE_WEIGHT)
    planted_nodes = {a for e in edges.all_edges() for a in e}
    free = np.array([i for i in range(n_rois) if i not in planted_nodes])
    for block in np.array_split(free, _N_COMMUNITIES):
        if block.size < 2:
            continue
        for a in block:
            for b in block:
                if a != b:
                    base[a, b] = _COMMUNITY_WEIGHT
        for m in range(block.size // 2):
            a, b = block[2 * m], block[2 * m + 1]
            base[a, b] = base[b, a] = _PARTNER_WEIGHT
    for a, b in edges.all_edges():
        base[a, b] = base[b, a] = _PLANTED_BASE
    np.fill_diagonal(base, 0.0)
    return base


def _stage_offsets(n_rois: int, edges: PlantedEdges, signal: float) -> dict[str, np.ndarray]:
    offsets = {stage: np.zeros((n_rois, n_rois)) for stage in STAGES}

    def bump(stage: str, edge_set: tuple[Edge, ...]) -> None:
        for a, b in edge_set:
            offsets[stage][a, b] += signal
            offsets[stage][b, a] += signal

    bump("EMCI", edges.nc_emci_increased)
    bump("LMCI", edges.nc_emci_increased)
    bump("NC", edges.nc_emci_decreased)
    bump("LMCI", edges.emci_lmci_increased)
    bump("NC", edges.emci_lmci_decreased)
    bump("EMCI", edges.emci_lmci_decreased)
    return offsets


def _stage_volume_scale(n_rois: int, edges: PlantedEdges, signal: float) -> dict[str, np.ndarray]:
    """Per-stage multiplicative volume atrophy on planted-pair nodes."""
    early = {a for e in edges.nc_emci_increased + edges.nc_emci_decreased for a in e}
    late = {a for e in edges.emci_lmci_increased + edges.emci_lmci_decreased for a in e}
    shrink = 1.0 - _ATROPHY_MAX * signal
    scale = {stage: np.ones(n_rois) for stage in STAGES}
    for node in early:
        scale["EMCI"][node] = shrink
        scale["LMCI"][node] = shrink
    for node in late:
        scale["LMCI"][node] *= shrink
    return scale


def _symmetric_uniform(rng: np.random.Generator, n: int, amplitude: float) -> np.ndarray:
    raw = rng.uniform(-amplitude, amplitude, size=(n, n))
    upper = np.triu(raw, k=1)
    return upper + upper.T


def _finish(matrix: np.ndarray) -> ConnectivityMatrix:
    clipped = np.clip(matrix, 0.0, 1.0)
    np.fill_diagonal(clipped, 0.0)
    return ConnectivityMatrix(clipped)


def generate_synthetic_cohort(
    seed: int,
    n_per_class: int = 76,
    n_rois: int = 90,
    signal: float = 0.4,
) -> Cohort:
    """Generate a three-stage cohort with planted edge-level stage effects.

    `signal` is the expected class-mean difference on planted edges; 0
    removes all label-dependent structure.
    """
    if n_per_class < 2:
        raise ValidationError(f"need at least 2 subjects per class, got {n_per_class}")
    if n_rois < 6:
        raise ValidationError(f"need at least 6 ROIs, got {n_rois}")
    if not 0.0 <= signal <= 1.0:
        raise ValidationError(f"signal must be in [0, 1], got {signal}")

    rng = np.random.default_rng(seed)
    edges = planted_edge_sets(n_rois)
    base = _community_base(n_rois, edges)

    cohort_jitter = _symmetric_uniform(rng, n_rois, _COHORT_JITTER)
    sc_pattern = _symmetric_uniform(rng, n_rois, _MODALITY_PATTERN)
    fc_pattern = _symmetric_uniform(rng, n_rois, _MODALITY_PATTERN)
    base_volumes = rng.permutation(np.linspace(1.0, 2.0, n_rois))
    offsets = _stage_offsets(n_rois, edges, signal)
    volume_scale = _stage_volume_scale(n_rois, edges, signal)

    subjects = []
    for stage in STAGES:
        stage_base = base + offsets[stage]
        stage_volumes = base_volumes * volume_scale[stage]
        for k in range(n_per_class):
            shared = _symmetric_uniform(rng, n_rois, _SHARED_NOISE)
            sc_noise = _symmetric_uniform(rng, n_rois, _MODALITY_NOISE)
            fc_noise = _symmetric_uniform(rng, n_rois, _MODALITY_NOISE)
            volumes = stage_volumes * (1.0 + rng.uniform(-0.002, 0.002, size=n_rois))
            sc = stage_base * (1.0 + cohort_jitter + sc_pattern + shared + sc_noise)
            fc = stage_base * (1.0 + cohort_jitter + fc_pattern + shared + fc_noise)
            subjects.append(
                Subject(
                    subject_id=f"{stage.lower()}-{k:03d}",
                    label=stage,
                    sc=_finish(sc),
                    fc=_finish(fc),
                    volumes=volumes,
                )
            )
    return Cohort(subjects=subjects, atlas=RoiAtlas.default(n_rois))
