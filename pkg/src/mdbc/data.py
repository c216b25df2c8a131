"""Synthetic dataset generation and dataset I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .models import Model, sample_batch


@dataclass
class Dataset:
    points: np.ndarray  # (n, p)
    labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if not np.all(np.isfinite(self.points)):
            raise InputError("dataset contains non-finite points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape[0] != self.points.shape[0]:
                raise InputError("labels length does not match points")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def gen_circles(
    n: int,
    noise_sd: float = 0.15,
    factor: float = 0.25,
    outer_fraction: float = 0.8,
    seed: int = 0,
) -> Dataset:
    """Two noisy concentric circles: outer radius 1, inner radius ``factor``.

    floor(outer_fraction * n) points go to the outer ring (label 0), the
    rest to the inner ring (label 1); angles are uniform and isotropic
    Gaussian noise of sd ``noise_sd`` is added.
    """
    if n < 2:
        raise InputError("n must be >= 2")
    if not 0 < factor < 1:
        raise InputError("factor must be in (0, 1)")
    if not 0 < outer_fraction < 1:
        raise InputError("outer_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n_outer = int(np.floor(outer_fraction * n))
    n_inner = n - n_outer
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radii = np.concatenate([np.ones(n_outer), np.full(n_inner, factor)])
    points = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    points += noise_sd * rng.standard_normal((n, 2))
    labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    return Dataset(
        points=points,
        labels=labels,
        provenance={
            "generator": "circles",
            "n": n,
            "noise_sd": noise_sd,
            "factor": factor,
            "outer_fraction": outer_fraction,
            "seed": seed,
        },
    )


def gen_gmm(model: Model, theta, n: int, seed: int = 0) -> Dataset:
    """n i.i.d. draws from a mixture model, with component labels."""
    if model.family != "gmm":
        raise InputError("gen_gmm requires a mixture model")
    rng = np.random.default_rng(seed)
    points, labels = sample_batch(model, theta, n, rng)
    return Dataset(
        points=points,
        labels=labels,
        provenance={"generator": "gmm", "n": n, "seed": seed,
                    "spec": {"n_components": model.spec.n_components, "dim": model.spec.dim}},
    )


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) / self.sd

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.sd + self.mean


def standardize(data: Dataset):
    """Center and scale columns to zero mean / unit sd (population sd).

    Returns (standardized dataset, Standardizer with the fitted transform).
    """
    if data.n < 2:
        raise InputError("need at least two points to standardize")
    mean = data.points.mean(axis=0)
    sd = data.points.std(axis=0, ddof=0)
    if np.any(sd == 0):
        raise InputError("zero-variance column; cannot standardize")
    tf = Standardizer(mean=mean, sd=sd)
    out = Dataset(
        points=tf.apply(data.points),
        labels=None if data.labels is None else data.labels.copy(),
        provenance={**data.provenance, "standardized": True},
    )
    return out, tf


# ---------------------------------------------------------------------------
# CSV + provenance sidecar I/O
# ---------------------------------------------------------------------------


def save_dataset(path, data: Dataset) -> None:
    path = Path(path)
    cols = [f"x{i + 1}" for i in range(data.dim)]
    lines = []
    if data.labels is not None:
        lines.append(",".join(cols + ["label"]))
        for row, lab in zip(data.points, data.labels):
            lines.append(",".join(repr(float(v)) for v in row) + f",{int(lab)}")
    else:
        lines.append(",".join(cols))
        for row in data.points:
            lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    path.with_suffix(path.suffix + ".provenance.json").write_text(
        json.dumps(data.provenance, indent=2)
    )


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        has_labels = header[-1] == "label"
        dim = len(header) - (1 if has_labels else 0)
        points, labels = [], []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            points.append([float(v) for v in parts[:dim]])
            if has_labels:
                labels.append(int(parts[dim]))
    provenance = {}
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    if sidecar.exists():
        provenance = json.loads(sidecar.read_text())
    return Dataset(
        points=np.array(points, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if has_labels else None,
        provenance=provenance,
    )
