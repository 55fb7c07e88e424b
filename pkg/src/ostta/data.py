"""Synthetic Gaussian-blob datasets, covariate shift, and test streams.

Labels are integers: 0..num_known-1 for known classes, UNKNOWN (-1) for the
collective unknown class. Multiple novel clusters all map to UNKNOWN.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

UNKNOWN = -1
UNKNOWN_TOKEN = "unknown"

_MAX_CENTER_RETRIES = 1000


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int  # known index or UNKNOWN


@dataclass(frozen=True)
class BlobSpec:
    num_known: int = 3
    num_unknown_clusters: int = 1
    dim: int = 2
    samples_per_cluster: int = 100
    cluster_std: float = 1.0
    center_box: tuple[float, float] = (-8.0, 8.0)
    seed: int = 0

    def validate(self) -> None:
        if self.num_known < 2:
            raise ValueError("need at least 2 known classes")
        if self.num_unknown_clusters < 1:
            raise ValueError("need at least 1 unknown cluster")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.samples_per_cluster < 1:
            raise ValueError("samples_per_cluster must be >= 1")
        if self.cluster_std <= 0:
            raise ValueError("cluster_std must be positive")
        if self.center_box[0] >= self.center_box[1]:
            raise ValueError("center_box low must be < high")


@dataclass(frozen=True)
class ShiftSpec:
    rotation_angle: float = 0.0  # radians, first two dims only
    translation: tuple[float, ...] = ()
    noise_std: float = 0.0
    seed: int = 0


def _place_centers(spec: BlobSpec, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample cluster centers with pairwise distance >= 2*std."""
    low, high = spec.center_box
    n = spec.num_known + spec.num_unknown_clusters
    min_sep = 2.0 * spec.cluster_std
    centers: list[np.ndarray] = []
    retries = 0
    while len(centers) < n:
        c = rng.uniform(low, high, size=spec.dim)
        if all(np.linalg.norm(c - p) >= min_sep for p in centers):
            centers.append(c)
        else:
            retries += 1
            if retries > _MAX_CENTER_RETRIES:
                raise RuntimeError(
                    f"could not place {n} centers with separation {min_sep} "
                    f"inside {spec.center_box} after {_MAX_CENTER_RETRIES} retries"
                )
    return np.stack(centers)


def generate_blobs(spec: BlobSpec) -> tuple[list[Sample], list[Sample]]:
    """Generate (train, test) sets. Train holds known classes only; test holds
    a fresh draw from every cluster including the unknown ones."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = _place_centers(spec, rng)
    spc = spec.samples_per_cluster

    train: list[Sample] = []
    test: list[Sample] = []
    for k in range(spec.num_known):
        pts = rng.normal(centers[k], spec.cluster_std, size=(2 * spc, spec.dim))
        train.extend(Sample(p, k) for p in pts[:spc])
        test.extend(Sample(p, k) for p in pts[spc:])
    for u in range(spec.num_unknown_clusters):
        c = centers[spec.num_known + u]
        pts = rng.normal(c, spec.cluster_std, size=(spc, spec.dim))
        test.extend(Sample(p, UNKNOWN) for p in pts)
    return train, test


def apply_shift(dataset: list[Sample], shift: ShiftSpec) -> list[Sample]:
    """Rotate (first two dims), translate, then add Gaussian noise.
    Labels are untouched."""
    if not dataset:
        raise ValueError("dataset is empty")
    dim = dataset[0].features.shape[0]
    translation = np.zeros(dim)
    if shift.translation:
        t = np.asarray(shift.translation, dtype=np.float64)
        if t.shape[0] != dim:
            raise ValueError(f"translation dim {t.shape[0]} != feature dim {dim}")
        translation = t
    c, s = np.cos(shift.rotation_angle), np.sin(shift.rotation_angle)
    rot = np.eye(dim)
    rot[0, 0], rot[0, 1], rot[1, 0], rot[1, 1] = c, -s, s, c
    rng = np.random.default_rng(shift.seed)
    out = []
    for sample in dataset:
        x = rot @ sample.features + translation
        if shift.noise_std > 0:
            x = x + rng.normal(0.0, shift.noise_std, size=dim)
        out.append(Sample(x, sample.label))
    return out


def make_stream(dataset: list[Sample], order_seed: int) -> list[Sample]:
    """Deterministic permutation of the dataset; each element appears once."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(order_seed)
    order = rng.permutation(len(dataset))
    return [dataset[i] for i in order]


def save_csv(dataset: list[Sample], path: str) -> None:
    dim = dataset[0].features.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dim)] + ["label"])
        for s in dataset:
            label = UNKNOWN_TOKEN if s.label == UNKNOWN else str(s.label)
            writer.writerow([repr(float(v)) for v in s.features] + [label])


def load_csv(path: str) -> list[Sample]:
    out: list[Sample] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 1
        for row in reader:
            feats = np.array([float(v) for v in row[:dim]])
            label = UNKNOWN if row[dim] == UNKNOWN_TOKEN else int(row[dim])
            out.append(Sample(feats, label))
    return out
