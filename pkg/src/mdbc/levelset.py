"""Density-based clustering via upper-level sets.

Core points are those whose log-density strictly exceeds a threshold;
connected components of the radius-neighborhood graph on the cores form
candidate clusters; components below the minimum size and all non-core
points are then folded onto the surviving clusters by nearest-point
assignment. Assignment stages use snapshot semantics (every point is
matched against the set labeled before the stage started), which makes
the result independent of point order up to label renaming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError


@dataclass(frozen=True)
class LevelSetParams:
    """Threshold/radius/size knobs; defaults follow the reference pipeline."""

    tau: float
    r: float
    min_cluster_size: int = 100
    tau_percentile: float = 10.0
    r_kth: int = 10
    r_factor: float = 1.2

    def __post_init__(self):
        if self.r < 0:
            raise InputError("radius must be >= 0")
        if self.min_cluster_size < 1:
            raise InputError("min_cluster_size must be >= 1")
        if not 0 <= self.tau_percentile <= 100:
            raise InputError("tau_percentile must be in [0, 100]")


@dataclass
class Labeling:
    """Cluster assignment for one dataset: labels in {0..n_clusters-1}."""

    labels: np.ndarray
    n_clusters: int
    warning: str | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def threshold_from_percentile(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n/100)-th smallest value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("empty value vector")
    if not 0 <= q <= 100:
        raise InputError("percentile must be in [0, 100]")
    rank = max(1, math.ceil(q * values.size / 100.0))
    return float(np.sort(values)[rank - 1])


def adaptive_radius(points, kth: int = 10, factor: float = 1.2):
    """factor times the mean distance to the kth nearest other point.

    Returns (radius, warning); the warning is set when all points coincide.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n <= kth:
        raise InputError(f"need more than kth={kth} points, got {n}")
    tree = cKDTree(points)
    dists, _ = tree.query(points, k=kth + 1)
    mean_kth = float(dists[:, kth].mean())
    warning = None
    if mean_kth == 0.0:
        warning = "all points identical; adaptive radius is 0"
    return factor * mean_kth, warning


def _neighbor_pairs(points: np.ndarray, r: float) -> np.ndarray:
    """Index pairs at Euclidean distance <= r, exactly.

    The kd-tree query uses a slightly inflated radius and candidates are
    re-filtered with the plain squared-distance formula, so results match a
    brute-force scan bit-for-bit at the boundary.
    """
    n = points.shape[0]
    if n < 2 or r < 0:
        return np.empty((0, 2), dtype=np.int64)
    tree = cKDTree(points)
    pairs = tree.query_pairs(r * (1.0 + 1e-12) + 1e-300, output_type="ndarray")
    if len(pairs) == 0:
        return pairs.astype(np.int64).reshape(0, 2)
    d2 = ((points[pairs[:, 0]] - points[pairs[:, 1]]) ** 2).sum(axis=1)
    return pairs[d2 <= r * r].astype(np.int64)


def radius_components(points, r: float) -> np.ndarray:
    """Connected-component labels of the graph with edges at distance <= r.

    Components are numbered 0.. in order of their smallest member index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    uf = UnionFind(n)
    for a, b in _neighbor_pairs(points, r):
        uf.union(int(a), int(b))
    roots = np.array([uf.find(i) for i in range(n)])
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for i, root in enumerate(roots):
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return labels


def _nearest_labeled(points, query_idx, pool_idx, pool_labels):
    """For each query point, the label of the nearest pool point.

    Ties are broken by the smallest pool point index (pool_idx is assumed
    ascending; distances are compared exactly).
    """
    q = points[query_idx]
    p = points[pool_idx]
    out = np.empty(len(query_idx), dtype=np.int64)
    # chunked O(q*m) scan: exact and tie-stable (argmin picks first minimum)
    chunk = max(1, int(2e6 // max(1, len(pool_idx))))
    for start in range(0, len(query_idx), chunk):
        block = q[start : start + chunk]
        d2 = ((block[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = pool_labels[d2.argmin(axis=1)]
    return out


def cluster_upper_level(points, logdens, params: LevelSetParams) -> Labeling:
    """Upper-level-set clustering; see the module docstring for the stages."""
    points = np.asarray(points, dtype=np.float64)
    logdens = np.asarray(logdens, dtype=np.float64)
    n = points.shape[0]
    if logdens.shape != (n,):
        raise InputError("points and logdens lengths differ")
    if n == 0:
        raise InputError("empty dataset")

    labels = np.full(n, -1, dtype=np.int64)
    warning = None

    core = np.flatnonzero(logdens > params.tau)
    if core.size == 0:
        return Labeling(np.zeros(n, dtype=np.int64), 1, "no core points above threshold; single cluster")

    comp = radius_components(points[core], params.r)
    n_comp = int(comp.max()) + 1
    sizes = np.bincount(comp, minlength=n_comp)
    large = np.flatnonzero(sizes >= params.min_cluster_size)
    if large.size == 0:
        # Algorithm undefined when no component is large enough; anchor on
        # the largest component (ties: smallest component id) and warn.
        large = np.array([int(sizes.argmax())])
        warning = "no component reached min_cluster_size; using largest component"

    large_rank = {int(c): i for i, c in enumerate(large)}
    core_labels = np.full(core.size, -1, dtype=np.int64)
    for i, c in enumerate(comp):
        if int(c) in large_rank:
            core_labels[i] = large_rank[int(c)]
    labels[core] = core_labels

    # small-component cores -> nearest core in a kept component
    small_mask = core_labels < 0
    if small_mask.any():
        kept_idx = core[~small_mask]
        labels[core[small_mask]] = _nearest_labeled(
            points, core[small_mask], kept_idx, labels[kept_idx]
        )

    # non-core points -> nearest point labeled before this stage
    noise = np.flatnonzero(labels < 0)
    if noise.size:
        pool = np.flatnonzero(labels >= 0)
        labels[noise] = _nearest_labeled(points, noise, pool, labels[pool])

    return Labeling(labels, int(large.size), warning)


# ---------------------------------------------------------------------------
# CSV persistence: header row "n,T", then one row of labels per resample
# ---------------------------------------------------------------------------


def save_labelings(path, labelings: list[Labeling]) -> None:
    if not labelings:
        raise InputError("no labelings to save")
    n = len(labelings[0].labels)
    lines = [f"{n},{len(labelings)}"]
    for lab in labelings:
        if len(lab.labels) != n:
            raise InputError("labelings have differing lengths")
        lines.append(",".join(str(int(v)) for v in lab.labels))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_labelings(path) -> list[Labeling]:
    with open(path) as fh:
        header = fh.readline().strip()
        n, t = (int(v) for v in header.split(","))
        out = []
        for _ in range(t):
            row = np.array([int(v) for v in fh.readline().strip().split(",")], dtype=np.int64)
            if row.size != n:
                raise InputError("label row length does not match header")
            out.append(Labeling(row, int(row.max()) + 1))
    return out
