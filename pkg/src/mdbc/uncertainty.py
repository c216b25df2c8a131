"""Posterior summaries over a clustering ensemble.

The co-clustering matrix records how often each pair of points shares a
cluster across resamples; per-point certainty is the mean squared
deviation of a matrix row from 1/2. The matching distance between two
cluster families is the minimum over label permutations of summed
symmetric-difference measures, solved exactly as a linear assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .levelset import Labeling


@dataclass
class CoClusterMatrix:
    values: np.ndarray  # (n, n) float64, symmetric, multiples of 1/T
    n_resamples: int


def _count_matrix(labelings, n) -> np.ndarray:
    counts = np.zeros((n, n), dtype=np.int64)
    for lab in labelings:
        labels = lab.labels if isinstance(lab, Labeling) else np.asarray(lab)
        if labels.shape != (n,):
            raise InputError("labelings have differing lengths")
        counts += labels[:, None] == labels[None, :]
    return counts


def coclustering_matrix(labelings, n_workers: int = 1) -> CoClusterMatrix:
    """M(i,j) = fraction of resamples assigning i and j to one cluster.

    Accumulation is an integer count summed over resamples (optionally in
    partitions) and divided once by T, so any partitioning of the work
    yields the same bytes.
    """
    labelings = list(labelings)
    if not labelings:
        raise InputError("need at least one labeling")
    first = labelings[0].labels if isinstance(labelings[0], Labeling) else np.asarray(labelings[0])
    n = first.shape[0]
    t = len(labelings)
    if n_workers > 1:
        splits = np.array_split(np.arange(t), n_workers)
        counts = np.zeros((n, n), dtype=np.int64)
        for part in splits:
            if len(part):
                counts += _count_matrix([labelings[i] for i in part], n)
    else:
        counts = _count_matrix(labelings, n)
    return CoClusterMatrix(values=counts / float(t), n_resamples=t)


def certainty_scores(m: CoClusterMatrix) -> np.ndarray:
    """S(i) = mean_j (M(i,j) - 0.5)^2, diagonal included; range [0, 1/4]."""
    v = m.values
    return ((v - 0.5) ** 2).mean(axis=1)


def cluster_count_posterior(labelings) -> dict[int, float]:
    """Histogram of the number of clusters across resamples; sums to 1."""
    labelings = list(labelings)
    if not labelings:
        raise InputError("need at least one labeling")
    counts: dict[int, int] = {}
    for lab in labelings:
        k = lab.n_clusters if isinstance(lab, Labeling) else int(np.max(lab)) + 1
        counts[k] = counts.get(k, 0) + 1
    t = len(labelings)
    return {k: c / t for k, c in sorted(counts.items())}


# ---------------------------------------------------------------------------
# Matching distance between cluster families
# ---------------------------------------------------------------------------


def partition_sets(labeling: Labeling, n_atoms: int | None = None) -> list[np.ndarray]:
    """Per-cluster atom-index arrays for a labeling."""
    labels = labeling.labels
    return [np.flatnonzero(labels == c) for c in range(labeling.n_clusters)]


def clustering_distance(a_sets, b_sets, atom_measure=None, pad: bool = False) -> float:
    """Minimum over matchings of summed symmetric-difference measures.

    ``a_sets``/``b_sets`` are lists of integer index arrays over a shared
    atom space; ``atom_measure`` maps atoms to weights (default: counting
    measure). With ``pad``, the smaller family is padded with empty
    clusters, so matching a cluster to nothing costs its own measure.
    """
    a_sets = [np.asarray(s, dtype=np.int64) for s in a_sets]
    b_sets = [np.asarray(s, dtype=np.int64) for s in b_sets]
    if not pad and len(a_sets) != len(b_sets):
        raise InputError("cluster counts differ; pass pad=True to allow")
    k = max(len(a_sets), len(b_sets))
    if k == 0:
        return 0.0

    n_atoms = 0
    for s in a_sets + b_sets:
        if s.size:
            n_atoms = max(n_atoms, int(s.max()) + 1)
    if atom_measure is None:
        atom_measure = np.ones(n_atoms)
    else:
        atom_measure = np.asarray(atom_measure, dtype=np.float64)
        if n_atoms > atom_measure.shape[0]:
            raise InputError("atom_measure shorter than the largest atom index")

    def mass(idx):
        return float(atom_measure[idx].sum()) if idx.size else 0.0

    cost = np.zeros((k, k))
    a_masses = [mass(s) for s in a_sets]
    b_masses = [mass(s) for s in b_sets]
    a_ind = []
    for s in a_sets:
        ind = np.zeros(n_atoms, dtype=bool)
        ind[s] = True
        a_ind.append(ind)
    for i in range(k):
        for j in range(k):
            am = a_masses[i] if i < len(a_sets) else 0.0
            bm = b_masses[j] if j < len(b_sets) else 0.0
            if i < len(a_sets) and j < len(b_sets):
                inter = mass(b_sets[j][a_ind[i][b_sets[j]]]) if b_sets[j].size else 0.0
                cost[i, j] = am + bm - 2.0 * inter
            else:
                cost[i, j] = am + bm
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def labeling_distance(a: Labeling, b: Labeling, pad: bool = False) -> float:
    """Matching distance between two labelings under the counting measure."""
    if len(a.labels) != len(b.labels):
        raise InputError("labelings cover different numbers of points")
    return clustering_distance(partition_sets(a), partition_sets(b), pad=pad)


def label_agreement(a: Labeling, b: Labeling) -> float:
    """Fraction of points on which optimally matched labelings agree."""
    n = len(a.labels)
    d = clustering_distance(partition_sets(a), partition_sets(b), pad=True)
    return 1.0 - d / (2.0 * n)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_cocluster(out_dir, m: CoClusterMatrix) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = m.values.shape[0]
    header = {
        "n": n,
        "n_resamples": m.n_resamples,
        "dtype": "<f8",
        "order": "C",
        "matrix_file": "cocluster.bin",
    }
    (out / "cocluster.json").write_text(json.dumps(header, indent=2))
    (out / "cocluster.bin").write_bytes(
        np.ascontiguousarray(m.values, dtype="<f8").tobytes()
    )


def load_cocluster(out_dir) -> CoClusterMatrix:
    out = Path(out_dir)
    header = json.loads((out / "cocluster.json").read_text())
    n = header["n"]
    raw = (out / header["matrix_file"]).read_bytes()
    values = np.frombuffer(raw, dtype="<f8").reshape(n, n).copy()
    return CoClusterMatrix(values=values, n_resamples=header["n_resamples"])


def save_certainty_csv(path, scores) -> None:
    with open(path, "w") as fh:
        fh.write("index,score\n")
        for i, s in enumerate(np.asarray(scores)):
            fh.write(f"{i},{float(s)!r}\n")


def load_certainty_csv(path) -> np.ndarray:
    with open(path) as fh:
        if fh.readline().strip() != "index,score":
            raise InputError("not a certainty csv")
        return np.array([float(line.split(",")[1]) for line in fh if line.strip()])


def save_count_posterior(path, posterior: dict[int, float]) -> None:
    Path(path).write_text(json.dumps({str(k): v for k, v in posterior.items()}, indent=2))
