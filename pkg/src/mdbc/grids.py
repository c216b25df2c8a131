"""Densities tabulated on regular 1-D/2-D grids and the functionals used by
the theory checks: sup/Hellinger distances, margin measure near a level,
saddle heights (maximum-bottleneck over grid paths), and connected
components of upper-level sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .levelset import UnionFind
from .models import Model, log_density_batch


@dataclass(frozen=True)
class GridDensity:
    """Non-negative density values at the nodes of a regular grid."""

    box: tuple  # ((lo, hi), ...) per dimension
    values: np.ndarray  # shape = resolution per dimension

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim not in (1, 2):
            raise InputError("grid diagnostics support 1-D and 2-D only")
        if len(self.box) != v.ndim:
            raise InputError("box does not match value dimensions")
        if np.any(v < 0):
            raise InputError("density values must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def spacings(self) -> tuple:
        return tuple(
            (hi - lo) / (r - 1) for (lo, hi), r in zip(self.box, self.values.shape)
        )

    @property
    def cell_volume(self) -> float:
        out = 1.0
        for h in self.spacings:
            out *= h
        return out

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, r) for (lo, hi), r in zip(self.box, self.values.shape)
        ]

    def nodes(self) -> np.ndarray:
        """(n_nodes, ndim) coordinates in C order of the value array."""
        axes = self.axes()
        if self.ndim == 1:
            return axes[0][:, None]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)


def _check_same_grid(a: GridDensity, b: GridDensity):
    if a.values.shape != b.values.shape or a.box != b.box:
        raise InputError("grids differ in box or resolution")


def grid_density(model: Model, theta, box, resolution) -> GridDensity:
    """Tabulate exp(log_density) on a regular grid."""
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if isinstance(resolution, int):
        resolution = (resolution,) * len(box)
    if any(r < 2 for r in resolution):
        raise InputError("resolution must be >= 2 per dimension")
    g = GridDensity(box=box, values=np.zeros(resolution))
    vals = np.exp(log_density_batch(model, theta, g.nodes()))
    return GridDensity(box=box, values=vals.reshape(resolution))


def sup_distance(a: GridDensity, b: GridDensity) -> float:
    """Max absolute node difference (grid L-infinity)."""
    _check_same_grid(a, b)
    return float(np.abs(a.values - b.values).max())


def hellinger_distance(a: GridDensity, b: GridDensity) -> float:
    """sqrt(0.5 * sum (sqrt a - sqrt b)^2 * cellvol); inputs quadrature-normalized."""
    _check_same_grid(a, b)
    diff = np.sqrt(a.values) - np.sqrt(b.values)
    return float(np.sqrt(0.5 * (diff**2).sum() * a.cell_volume))


def margin_measure(g: GridDensity, c: float, eps: float) -> float:
    """Grid measure of the band {|f - c| <= eps}."""
    if eps <= 0:
        raise InputError("eps must be positive")
    return float(np.count_nonzero(np.abs(g.values - c) <= eps) * g.cell_volume)


def _grid_neighbors(shape, flat: int):
    if len(shape) == 1:
        n = shape[0]
        if flat > 0:
            yield flat - 1
        if flat < n - 1:
            yield flat + 1
    else:
        rows, cols = shape
        r, c = divmod(flat, cols)
        if r > 0:
            yield flat - cols
        if r < rows - 1:
            yield flat + cols
        if c > 0:
            yield flat - 1
        if c < cols - 1:
            yield flat + 1


def saddle_height(g: GridDensity, a_nodes, b_nodes) -> float:
    """Best achievable minimum density along a grid path joining the sets.

    Implemented as a descending-threshold union-find sweep over grid nodes
    (4-connected in 2-D), which solves the maximum-bottleneck path problem
    exactly; endpoint values participate in the path minimum.
    """
    a_nodes = np.asarray(a_nodes, dtype=np.int64).ravel()
    b_nodes = np.asarray(b_nodes, dtype=np.int64).ravel()
    if a_nodes.size == 0 or b_nodes.size == 0:
        raise InputError("node sets must be non-empty")
    if np.intersect1d(a_nodes, b_nodes).size:
        raise InputError("node sets must be disjoint")
    values = g.values.ravel()
    n = values.size
    in_a = np.zeros(n, dtype=bool)
    in_b = np.zeros(n, dtype=bool)
    in_a[a_nodes] = True
    in_b[b_nodes] = True

    order = np.argsort(-values, kind="stable")
    uf = UnionFind(n)
    # has_a/has_b flags live on the current root
    has_a = in_a.copy()
    has_b = in_b.copy()
    active = np.zeros(n, dtype=bool)
    shape = g.values.shape
    for flat in order:
        flat = int(flat)
        active[flat] = True
        for nb in _grid_neighbors(shape, flat):
            if not active[nb]:
                continue
            ra, rb = uf.find(flat), uf.find(nb)
            if ra == rb:
                continue
            fa, fb = has_a[ra] or has_a[rb], has_b[ra] or has_b[rb]
            uf.union(ra, rb)
            root = uf.find(ra)
            has_a[root], has_b[root] = fa, fb
            if fa and fb:
                return float(values[flat])
        root = uf.find(flat)
        if has_a[root] and has_b[root]:
            # a single node can bridge the sets (or belong to one adjacent to the other)
            return float(values[flat])
    raise InputError("node sets are not connected on the grid")


def level_set_components(g: GridDensity, c: float):
    """Connected components of {f >= c} under grid adjacency.

    Returns (count, labels) where labels has the grid shape, component ids
    are 0.. in order of the smallest flat node index, and nodes below the
    level carry -1.
    """
    values = g.values.ravel()
    n = values.size
    member = values >= c
    labels_flat = np.full(n, -1, dtype=np.int64)
    if not member.any():
        return 0, labels_flat.reshape(g.values.shape)
    uf = UnionFind(n)
    shape = g.values.shape
    idx = np.flatnonzero(member)
    for flat in idx:
        flat = int(flat)
        for nb in _grid_neighbors(shape, flat):
            if nb > flat and member[nb]:
                uf.union(flat, nb)
    seen: dict[int, int] = {}
    for flat in idx:
        root = uf.find(int(flat))
        if root not in seen:
            seen[root] = len(seen)
        labels_flat[flat] = seen[root]
    return len(seen), labels_flat.reshape(g.values.shape)


def grid_cluster_sets(g: GridDensity, c: float) -> list[np.ndarray]:
    """Flat node-index arrays of the level-c clusters (for distances)."""
    count, labels = level_set_components(g, c)
    flat = labels.ravel()
    return [np.flatnonzero(flat == j) for j in range(count)]


def cell_measure(g: GridDensity) -> np.ndarray:
    """Per-node Lebesgue weight (constant cell volume)."""
    return np.full(g.values.size, g.cell_volume)


def save_grid(path_prefix, g: GridDensity) -> None:
    prefix = Path(path_prefix)
    header = {
        "box": [list(b) for b in g.box],
        "resolution": list(g.values.shape),
        "dtype": "<f8",
        "order": "C",
    }
    prefix.with_suffix(".json").write_text(json.dumps(header))
    prefix.with_suffix(".bin").write_bytes(
        np.ascontiguousarray(g.values, dtype="<f8").tobytes()
    )


def load_grid(path_prefix) -> GridDensity:
    prefix = Path(path_prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    raw = prefix.with_suffix(".bin").read_bytes()
    values = np.frombuffer(raw, dtype="<f8").reshape(tuple(header["resolution"])).copy()
    return GridDensity(box=tuple(tuple(b) for b in header["box"]), values=values)
