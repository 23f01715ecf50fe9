"""Connectome data model: matrices, node features, cohorts, and file I/O.

A cohort lives on disk as a directory with a `cohort.json` manifest plus
one headerless CSV per connectivity matrix ('.' decimal separator, LF
line endings) and one plain-text volumes file (one value per line) per
subject. All paths in the manifest are relative to the manifest file.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError

STAGES = ("NC", "EMCI", "LMCI")

# 45 bilateral region abbreviations of the automated anatomical labelling
# atlas, in standard order; left/right interleaved gives the 90-node form.
_AAL_ABBREVIATIONS = (
    "PreCG", "SFGdor", "ORBsup", "MFG", "ORBmid", "IFGoperc", "IFGtriang",
    "ORBinf", "ROL", "SMA", "OLF", "SFGmed", "ORBsupmed", "REC", "INS",
    "ACG", "DCG", "PCG", "HIP", "PHG", "AMYG", "CAL", "CUN", "LING",
    "SOG", "MOG", "IOG", "FFG", "PoCG", "SPG", "IPL", "SMG", "ANG",
    "PCUN", "PCL", "CAU", "PUT", "PAL", "THA", "HES", "STG", "TPOsup",
    "MTG", "TPOmid", "ITG",
)


class Task(enum.Enum):
    """Binary staging task; the second class is always the later stage."""

    NC_EMCI = "nc-emci"
    EMCI_LMCI = "emci-lmci"

    @property
    def classes(self) -> tuple[str, str]:
        if self is Task.NC_EMCI:
            return ("NC", "EMCI")
        return ("EMCI", "LMCI")

    @property
    def earlier(self) -> str:
        return self.classes[0]

    @property
    def later(self) -> str:
        return self.classes[1]

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValidationError(
                f"label '{label}' is not part of task {self.value}"
            ) from None

    def one_hot(self, label: str) -> np.ndarray:
        y = np.zeros(2, dtype=np.float64)
        y[self.class_index(label)] = 1.0
        return y

    @classmethod
    def from_string(cls, s: str) -> "Task":
        for t in cls:
            if t.value == s:
                return t
        raise ValidationError(f"unknown task '{s}' (choose from "
                              f"{', '.join(t.value for t in cls)})")


@dataclass(frozen=True)
class RoiAtlas:
    """Ordered ROI names; index within the tuple is the node index."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("atlas names must be unique")
        if not self.names:
            raise ValidationError("atlas must name at least one region")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"ROI '{name}' not in atlas") from None

    @classmethod
    def aal90(cls) -> "RoiAtlas":
        names = []
        for abbr in _AAL_ABBREVIATIONS:
            names.append(f"{abbr}.L")
            names.append(f"{abbr}.R")
        return cls(tuple(names))

    @classmethod
    def generic(cls, n_rois: int) -> "RoiAtlas":
        return cls(tuple(f"ROI{i + 1:03d}" for i in range(n_rois)))

    @classmethod
    def default(cls, n_rois: int) -> "RoiAtlas":
        return cls.aal90() if n_rois == 90 else cls.generic(n_rois)


@dataclass(eq=False)
class ConnectivityMatrix:
    """Symmetric connectivity with weights in [0, 1] and a zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"connectivity matrix must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("connectivity matrix contains non-finite values")
        if not np.array_equal(w, w.T):
            raise ValidationError("connectivity matrix is not symmetric")
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValidationError(
                f"connectivity weights outside [0, 1]: min {w.min()}, max {w.max()}"
            )
        if np.any(np.diag(w) != 0.0):
            raise ValidationError("connectivity matrix diagonal must be zero")
        self.weights = w

    @property
    def n_rois(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_correlation(cls, corr: np.ndarray) -> "ConnectivityMatrix":
        """Map a correlation matrix in [-1, 1] to [0, 1] via (x + 1) / 2,
        symmetrize, and zero the diagonal."""
        c = np.asarray(corr, dtype=np.float64)
        c = (c + c.T) / 2.0
        w = (c + 1.0) / 2.0
        np.fill_diagonal(w, 0.0)
        return cls(w)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConnectivityMatrix) and np.array_equal(
            self.weights, other.weights
        )


@dataclass(eq=False)
class NodeFeatureMatrix:
    """One-hot node features: row i marks the volume rank of ROI i."""

    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ShapeError(f"feature matrix must be square, got shape {f.shape}")
        ok = (
            np.all((f == 0.0) | (f == 1.0))
            and np.all(f.sum(axis=1) == 1.0)
            and np.all(f.sum(axis=0) == 1.0)
        )
        if not ok:
            raise ValidationError("feature matrix rows must be distinct one-hot vectors")
        self.features = f

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeFeatureMatrix) and np.array_equal(
            self.features, other.features
        )


def build_node_features(volumes: np.ndarray) -> NodeFeatureMatrix:
    """One-hot encode each ROI's rank in ascending volume order.

    Ties are broken by ROI index, so equal volumes still yield distinct
    ranks and the result is always a permutation matrix.
    """
    v = np.asarray(volumes, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"volumes must be a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
        raise ValidationError("volumes must be positive and finite")
    order = np.argsort(v, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(v.size)
    features = np.zeros((v.size, v.size), dtype=np.float64)
    features[np.arange(v.size), ranks] = 1.0
    return NodeFeatureMatrix(features)


def normalize_adjacency(matrix: ConnectivityMatrix) -> np.ndarray:
    """Symmetric renormalization with self-loops:
    D^(-1/2) (A + I) D^(-1/2), where D is the degree of A + I."""
    return _normalize_array(matrix.weights)


def _normalize_array(a: np.ndarray) -> np.ndarray:
    a_loop = a + np.eye(a.shape[0])
    d = a_loop.sum(axis=1) ** -0.5
    return d[:, None] * a_loop * d[None, :]


@dataclass(eq=False)
class Subject:
    """One participant: structural + functional connectivity and ROI volumes."""

    subject_id: str
    label: str
    sc: ConnectivityMatrix
    fc: ConnectivityMatrix
    volumes: np.ndarray

    def __post_init__(self):
        if self.label not in STAGES:
            raise ValidationError(
                f"subject '{self.subject_id}': label '{self.label}' not in {STAGES}"
            )
        self.volumes = np.asarray(self.volumes, dtype=np.float64)
        if not np.all(np.isfinite(self.volumes)) or np.any(self.volumes <= 0.0):
            raise ValidationError(
                f"subject '{self.subject_id}': volumes must be positive and finite"
            )
        n = self.sc.n_rois
        if self.fc.n_rois != n or self.volumes.shape != (n,):
            raise ShapeError(
                f"subject '{self.subject_id}': inconsistent sizes "
                f"(sc {self.sc.n_rois}, fc {self.fc.n_rois}, volumes {self.volumes.shape})"
            )

    @property
    def n_rois(self) -> int:
        return self.sc.n_rois

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Subject)
            and self.subject_id == other.subject_id
            and self.label == other.label
            and self.sc == other.sc
            and self.fc == other.fc
            and np.array_equal(self.volumes, other.volumes)
        )


@dataclass(eq=False)
class Cohort:
    """A list of subjects sharing one atlas."""

    subjects: list[Subject]
    atlas: RoiAtlas

    def __post_init__(self):
        if not self.subjects:
            raise ValidationError("cohort has no subjects")
        n = len(self.atlas)
        for s in self.subjects:
            if s.n_rois != n:
                raise ShapeError(
                    f"subject '{s.subject_id}' has {s.n_rois} ROIs, atlas has {n}"
                )
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("subject ids must be unique")

    @property
    def n_rois(self) -> int:
        return len(self.atlas)

    def __len__(self) -> int:
        return len(self.subjects)

    def with_labels(self, labels) -> list[Subject]:
        wanted = set(labels)
        return [s for s in self.subjects if s.label in wanted]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Cohort)
            and self.atlas == other.atlas
            and len(self.subjects) == len(other.subjects)
            and all(a == b for a, b in zip(self.subjects, other.subjects))
        )


_MATRIX_FMT = "%.17g"  # full float64 round trip in text form


def save_cohort(cohort: Cohort, directory: str | Path) -> Path:
    """Write a cohort directory; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in cohort.subjects:
        sc_name = f"{s.subject_id}_sc.csv"
        fc_name = f"{s.subject_id}_fc.csv"
        vol_name = f"{s.subject_id}_volumes.txt"
        np.savetxt(directory / sc_name, s.sc.weights, fmt=_MATRIX_FMT, delimiter=",", newline="\n")
        np.savetxt(directory / fc_name, s.fc.weights, fmt=_MATRIX_FMT, delimiter=",", newline="\n")
        np.savetxt(directory / vol_name, s.volumes, fmt=_MATRIX_FMT, newline="\n")
        entries.append(
            {
                "id": s.subject_id,
                "label": s.label,
                "sc_path": sc_name,
                "fc_path": fc_name,
                "volumes_path": vol_name,
            }
        )
    manifest = {"atlas": list(cohort.atlas.names), "subjects": entries}
    path = directory / "cohort.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _load_matrix(path: Path, subject_id: str, kind: str) -> ConnectivityMatrix:
    if not path.is_file():
        raise ValidationError(f"subject '{subject_id}': missing {kind} file {path}")
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as err:
        raise ValidationError(f"subject '{subject_id}': unparseable {kind} file {path}: {err}") from None
    try:
        return ConnectivityMatrix(raw)
    except ValidationError as err:
        raise ValidationError(f"subject '{subject_id}': {kind}: {err}") from None


def load_cohort(manifest_path: str | Path) -> Cohort:
    """Read a cohort directory back from its manifest, validating everything."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "cohort.json"
    if not manifest_path.is_file():
        raise ValidationError(f"cohort manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValidationError(f"malformed manifest {manifest_path}: {err}") from None
    for key in ("atlas", "subjects"):
        if key not in manifest:
            raise ValidationError(f"manifest {manifest_path} lacks '{key}'")
    atlas = RoiAtlas(tuple(manifest["atlas"]))
    base = manifest_path.parent
    subjects = []
    for entry in manifest["subjects"]:
        sid = entry.get("id", "<missing id>")
        for key in ("id", "label", "sc_path", "fc_path", "volumes_path"):
            if key not in entry:
                raise ValidationError(f"subject '{sid}': manifest entry lacks '{key}'")
        sc = _load_matrix(base / entry["sc_path"], sid, "sc")
        fc = _load_matrix(base / entry["fc_path"], sid, "fc")
        vol_path = base / entry["volumes_path"]
        if not vol_path.is_file():
            raise ValidationError(f"subject '{sid}': missing volumes file {vol_path}")
        volumes = np.loadtxt(vol_path, ndmin=1)
        subjects.append(
            Subject(subject_id=entry["id"], label=entry["label"], sc=sc, fc=fc, volumes=volumes)
        )
    return Cohort(subjects=subjects, atlas=atlas)


def split_cohort(
    cohort: Cohort, task: Task, train_fraction: float, seed: int
) -> tuple[Cohort, Cohort | None]:
    """Stratified train/test split over the two task classes.

    Subjects outside the task's classes are dropped. Per class, the train
    count is floor(fraction * n) with any fractional remainder assigned
    to train. Deterministic for a given seed.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1], got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in task.classes:
        idx = [i for i, s in enumerate(cohort.subjects) if s.label == label]
        if not idx:
            raise ValidationError(f"cohort has no subjects labelled '{label}'")
        order = rng.permutation(len(idx))
        exact = train_fraction * len(idx)
        n_train = int(np.floor(exact))
        if exact - n_train > 1e-9:
            n_train += 1
        shuffled = [idx[j] for j in order]
        train_idx.extend(shuffled[:n_train])
        test_idx.extend(shuffled[n_train:])
    if not test_idx:
        warnings.warn("train_fraction leaves no held-out subjects", UserWarning)
    train = Cohort([cohort.subjects[i] for i in sorted(train_idx)], cohort.atlas)
    test = (
        Cohort([cohort.subjects[i] for i in sorted(test_idx)], cohort.atlas)
        if test_idx
        else None
    )
    return train, test
