"""Labeled datasets, feature maps, CSV/JSON I/O and synthetic generators.

Labels are always in {-1, +1}. Features are dense float64 vectors of a
fixed dimension per dataset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

DATASET_JSON_VERSION = 1


class LabeledSample(NamedTuple):
    label: int
    features: np.ndarray


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable collection of (label, feature-vector) pairs."""

    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array of shape (n, d)")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels and features disagree on sample count")
        if labels.size and not np.isin(labels, (-1, 1)).all():
            raise ValueError("labels must be -1 or +1")
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)
        self.labels.setflags(write=False)
        self.features.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(int(self.labels[i]), self.features[i])

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.labels[idx], self.features[idx])

    def to_json(self) -> dict:
        return {
            "version": DATASET_JSON_VERSION,
            "dim": self.dim,
            "labels": self.labels.tolist(),
            "features": self.features.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabeledDataset":
        if obj.get("version") != DATASET_JSON_VERSION:
            raise ValueError(f"unsupported dataset envelope version: {obj.get('version')!r}")
        features = np.asarray(obj["features"], dtype=np.float64)
        features = features.reshape(len(obj["labels"]), obj["dim"])
        return cls(np.asarray(obj["labels"]), features)


class FeatureMap:
    """Sufficient-statistics map f(y, x), antisymmetric in the label.

    The default map is f(y, x) = y * [x_1, ..., x_d, 1].  A custom basis
    h_1..h_m can be supplied instead; each h_i takes a length-d vector and
    returns a scalar, and f(y, x) = y * [h_1(x), ..., h_m(x)].
    """

    def __init__(self, dim_in: int, basis: Sequence[Callable] | None = None):
        if dim_in < 0:
            raise ValueError("dim_in must be >= 0")
        self.dim_in = dim_in
        self.basis = list(basis) if basis is not None else None

    @property
    def kind(self) -> str:
        return "linear_bias" if self.basis is None else "custom"

    @property
    def dim_out(self) -> int:
        return self.dim_in + 1 if self.basis is None else len(self.basis)

    def __call__(self, y: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim_in,):
            raise ValueError(f"expected feature vector of length {self.dim_in}, got {x.shape}")
        if y not in (-1, 1):
            raise ValueError("label must be -1 or +1")
        if self.basis is None:
            return y * np.append(x, 1.0)
        return y * np.array([h(x) for h in self.basis], dtype=np.float64)

    def eval_many(self, labels, X) -> np.ndarray:
        """Evaluate f over rows of X with matching labels; returns (n, dim_out)."""
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim_in:
            raise ValueError(f"expected (n, {self.dim_in}) feature matrix, got {X.shape}")
        if self.basis is None:
            H = np.hstack([X, np.ones((X.shape[0], 1))])
        else:
            H = np.column_stack([[h(row) for row in X] for h in self.basis]) \
                if X.shape[0] else np.empty((0, len(self.basis)))
        return labels[:, None] * H

    def to_json(self) -> dict:
        if self.basis is not None:
            raise ValueError("custom basis maps are not serializable")
        return {"kind": "linear_bias", "dim_in": self.dim_in}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureMap":
        if obj.get("kind") != "linear_bias":
            raise ValueError(f"unsupported feature map kind: {obj.get('kind')!r}")
        return cls(int(obj["dim_in"]))


@dataclass(frozen=True)
class CsvSpec:
    """How to read a dataset CSV: label first, then d numeric feature columns."""

    has_header: bool = False
    remap01: bool = False  # accept {0,1} labels and map 0 -> -1


def load_csv(path, spec: CsvSpec = CsvSpec()) -> LabeledDataset:
    """Read a dataset from CSV.  Row order is preserved.

    Raises ValueError with the offending 1-based row number on malformed
    rows, bad labels or inconsistent dimension.
    """
    labels, rows = [], []
    dim = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if spec.has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                raw = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"malformed numeric field at row {lineno}") from None
            label = raw[0]
            if spec.remap01:
                if label not in (0.0, 1.0):
                    raise ValueError(f"invalid label at row {lineno}: expected 0 or 1")
                label = -1.0 if label == 0.0 else 1.0
            if label not in (-1.0, 1.0):
                raise ValueError(f"invalid label at row {lineno}: expected -1 or +1")
            feats = raw[1:]
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                raise ValueError(f"inconsistent dimension at row {lineno}: expected {dim}, got {len(feats)}")
            labels.append(int(label))
            rows.append(feats)
    if not labels:
        raise ValueError(f"no data rows in {path}")
    return LabeledDataset(np.array(labels), np.array(rows, dtype=np.float64).reshape(len(labels), dim))


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write the dataset as label-first CSV with round-trippable floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for y, x in zip(dataset.labels, dataset.features):
            writer.writerow([int(y)] + [repr(float(v)) for v in x])


def load_features_csv(path, has_header: bool = False) -> np.ndarray:
    """Read a feature-only CSV (no label column) into an (n, d) array."""
    rows = []
    dim = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                raw = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"malformed numeric field at row {lineno}") from None
            if dim is None:
                dim = len(raw)
            elif len(raw) != dim:
                raise ValueError(f"inconsistent dimension at row {lineno}")
            rows.append(raw)
    if not rows:
        raise ValueError(f"no data rows in {path}")
    return np.asarray(rows, dtype=np.float64)


def _balanced_counts(n: int) -> tuple[int, int]:
    # class +1 takes the extra sample when n is odd
    n_pos = (n + 1) // 2
    return n_pos, n - n_pos


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _draw_class_gaussian(n: int, means: np.ndarray, rng: np.random.Generator) -> LabeledDataset:
    """Balanced two-class draw; means[c] is a list of component means for class c.

    Components within a class are balanced (earlier components take the
    remainder), unit isotropic covariance.  Row order: all +1 samples
    first, then all -1 samples.
    """
    mean_pos, mean_neg = np.atleast_2d(means[0]), np.atleast_2d(means[1])
    d = mean_pos.shape[1]
    n_pos, n_neg = _balanced_counts(n)
    blocks, labels = [], []
    for cls, n_c, comp in ((1, n_pos, mean_pos), (-1, n_neg, mean_neg)):
        which = np.arange(n_c) % comp.shape[0]
        noise = rng.standard_normal((n_c, d))
        blocks.append(comp[which] + noise)
        labels.append(np.full(n_c, cls))
    return LabeledDataset(np.concatenate(labels), np.vstack(blocks))


def gen_gaussian_shift(n_p: int, n_q: int, seed) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced 1-D two-Gaussian pair: source class means +-2, target +-1.5.

    Returns (target, source).  Deterministic in the seed; target and source
    use independent substreams so changing one size never perturbs the
    other draw.
    """
    if n_p < 1 or n_q < 1:
        raise ValueError("sample counts must be >= 1")
    ss_p, ss_q = _as_seedseq(seed).spawn(2)
    target = _draw_class_gaussian(n_p, np.array([[[1.5]], [[-1.5]]]), np.random.default_rng(ss_p))
    source = _draw_class_gaussian(n_q, np.array([[[2.0]], [[-2.0]]]), np.random.default_rng(ss_q))
    return target, source


def gen_same_distribution(
    n_p: int, n_q: int, seed, class_mean: float = 0.5
) -> tuple[LabeledDataset, LabeledDataset]:
    """P = Q sanity pair: independent draws from one 1-D two-Gaussian mixture.

    Class means sit at +-class_mean; the default keeps the classes well
    mixed so the ratio fit is well conditioned around its optimum at 0.
    """
    if n_p < 1 or n_q < 1:
        raise ValueError("sample counts must be >= 1")
    means = np.array([[[class_mean]], [[-class_mean]]])
    ss_p, ss_q = _as_seedseq(seed).spawn(2)
    target = _draw_class_gaussian(n_p, means, np.random.default_rng(ss_p))
    source = _draw_class_gaussian(n_q, means, np.random.default_rng(ss_q))
    return target, source


FOUR_GAUSSIAN_MEANS_POS = np.array([[-3.0, 0.0], [3.0, 0.0]])
FOUR_GAUSSIAN_MEANS_NEG = np.array([[-1.0, 0.0], [1.0, 0.0]])


def _four_gaussian_means(shift: float) -> list[np.ndarray]:
    pos = FOUR_GAUSSIAN_MEANS_POS + np.array([0.0, shift])
    neg = FOUR_GAUSSIAN_MEANS_NEG + np.array([0.0, -shift])
    return [pos, neg]


def gen_four_gaussian(n_p: int, n_q: int, shift: float, seed) -> tuple[LabeledDataset, LabeledDataset]:
    """2-D four-component mixture pair; classes interleave on axis 1.

    Source components: class +1 at (-3,0),(3,0); class -1 at (-1,0),(1,0),
    unit isotropic covariance.  The target shifts class +1 means by +shift
    and class -1 means by -shift along axis 2.  Returns (target, source).
    """
    if n_p < 4 or n_q < 4:
        raise ValueError("sample counts must be >= 4 (one per mixture component)")
    if shift < 0:
        raise ValueError("shift must be >= 0")
    ss_p, ss_q = _as_seedseq(seed).spawn(2)
    target = _draw_class_gaussian(n_p, _four_gaussian_means(shift), np.random.default_rng(ss_p))
    source = _draw_class_gaussian(n_q, _four_gaussian_means(0.0), np.random.default_rng(ss_q))
    return target, source
