"""Persistence-based mode clustering on a kNN graph (ToMATo style).

Points are swept in decreasing density-weight order. A point with no
previously processed neighbor starts a new peak; otherwise it joins its
highest-weight processed neighbor's cluster. When the sweep connects two
clusters at height w, the younger peak (lower birth weight) is merged into
the older one if its prominence ``birth - w`` is below the merge threshold;
either way the encounter is recorded once in the persistence diagram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .levelset import Labeling, UnionFind


@dataclass(frozen=True)
class KnnGraph:
    """Directed k-nearest-neighbor lists; used in symmetrized form."""

    k: int
    neighbors: np.ndarray  # (n, k) int64, no self edges


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float

    @property
    def prominence(self) -> float:
        return self.birth - self.death


def knn_graph(points, k: int) -> KnnGraph:
    """Exact Euclidean kNN; distance ties broken by smaller index."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise InputError("k must be >= 1")
    if n <= k:
        raise InputError(f"need more than k={k} points, got {n}")
    tree = cKDTree(points)
    dists, idx = tree.query(points, k=k + 1)
    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        # drop self, re-sort by (distance, index) for a deterministic tie rule
        cand = [(dists[i, j], int(idx[i, j])) for j in range(k + 1) if int(idx[i, j]) != i]
        if len(cand) > k:
            cand = cand[: k + 1]
        cand.sort()
        neighbors[i] = [c[1] for c in cand[:k]]
    return KnnGraph(k=k, neighbors=neighbors)


def symmetrized_adjacency(graph: KnnGraph) -> list[np.ndarray]:
    """Undirected adjacency: edge if either endpoint lists the other."""
    n = graph.neighbors.shape[0]
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in graph.neighbors[i]:
            adj[i].add(int(j))
            adj[int(j)].add(i)
    return [np.array(sorted(s), dtype=np.int64) for s in adj]


def density_weights(logdens) -> np.ndarray:
    """Exponentiate and normalize log-densities; strictly positive, sums to 1."""
    logdens = np.asarray(logdens, dtype=np.float64)
    if not np.all(np.isfinite(logdens)):
        raise InputError("log-density values must be finite")
    w = np.exp(logdens - logdens.max())
    return w / w.sum()


def tomato_cluster(graph: KnnGraph, weights, tau_merge: float):
    """Returns (Labeling, persistence pairs) for one weighted graph.

    Weight ties are broken by smaller point index throughout. The pair list
    records (birth, saddle) for the first encounter of every pair of peaks,
    whether or not the merge happened; the global maximum never dies.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    if graph.neighbors.shape[0] != n:
        raise InputError("graph size does not match weights")
    if np.any(weights <= 0):
        raise InputError("weights must be strictly positive")
    if tau_merge < 0:
        raise InputError("tau_merge must be >= 0")

    adj = symmetrized_adjacency(graph)
    order = sorted(range(n), key=lambda i: (-weights[i], i))
    rank = np.empty(n, dtype=np.int64)
    for pos, i in enumerate(order):
        rank[i] = pos

    uf = UnionFind(n)
    birth = np.full(n, -1.0)  # birth weight indexed by current root
    peak_of = np.arange(n)  # representative peak index per root
    pairs: list[PersistencePair] = []
    met: set[tuple[int, int]] = set()

    for i in order:
        processed = [j for j in adj[i] if rank[j] < rank[i]]
        if not processed:
            birth[i] = weights[i]
            continue
        parent = min(processed, key=lambda j: (-weights[j], j))
        root_i = uf.find(parent)
        uf.union(root_i, i)
        merged_root = uf.find(i)
        b, pk = birth[root_i], peak_of[root_i]
        birth[merged_root], peak_of[merged_root] = b, pk

        for j in processed:
            root_j = uf.find(j)
            root_i = uf.find(i)
            if root_j == root_i:
                continue
            # older = higher birth; ties by smaller peak index
            key_i = (-birth[root_i], peak_of[root_i])
            key_j = (-birth[root_j], peak_of[root_j])
            old, young = (root_i, root_j) if key_i < key_j else (root_j, root_i)
            pair_key = (min(peak_of[old], peak_of[young]), max(peak_of[old], peak_of[young]))
            prominence = birth[young] - weights[i]
            if prominence < tau_merge:
                if pair_key not in met:
                    pairs.append(PersistencePair(float(birth[young]), float(weights[i])))
                ob, op = birth[old], peak_of[old]
                uf.union(old, young)
                new_root = uf.find(old)
                birth[new_root], peak_of[new_root] = ob, op
            elif pair_key not in met:
                met.add(pair_key)
                pairs.append(PersistencePair(float(birth[young]), float(weights[i])))

    roots = np.array([uf.find(i) for i in range(n)])
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for i, root in enumerate(roots):
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return Labeling(labels, len(seen)), pairs


def save_persistence_csv(path, pairs: list[PersistencePair]) -> None:
    with open(path, "w") as fh:
        fh.write("birth,death\n")
        for p in pairs:
            fh.write(f"{p.birth!r},{p.death!r}\n")


def load_persistence_csv(path) -> list[PersistencePair]:
    with open(path) as fh:
        if fh.readline().strip() != "birth,death":
            raise InputError("not a persistence csv")
        out = []
        for line in fh:
            if line.strip():
                birth, death = line.strip().split(",")
                out.append(PersistencePair(float(birth), float(death)))
    return out
