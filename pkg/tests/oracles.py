"""Independent brute-force oracles used to validate the fast implementations.

Everything here is deliberately naive: O(n^2) scans, BFS, exhaustive
permutation or path enumeration. None of it shares code with the package.
"""

import itertools

import numpy as np


def bfs_radius_components(points, r):
    """Connected components of the distance<=r graph by adjacency-matrix BFS."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    adj = []
    for i in range(n):
        d2 = ((points - points[i]) ** 2).sum(axis=1)
        row = np.flatnonzero(d2 <= r * r)
        adj.append([int(j) for j in row if j != i])
    next_label = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        queue = [start]
        labels[start] = next_label
        while queue:
            node = queue.pop()
            for nb in adj[node]:
                if labels[nb] < 0:
                    labels[nb] = next_label
                    queue.append(nb)
        next_label += 1
    return labels


def nearest_in_pool(points, query, pool):
    """Index into pool of the closest pool point (ties: first listed)."""
    d2 = ((points[pool] - points[query]) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def algorithm1_labels(points, logdens, tau, r, m):
    """Literal transcription of the upper-level-set clustering algorithm."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    core = [i for i in range(n) if logdens[i] > tau]
    if not core:
        return np.zeros(n, dtype=np.int64)
    comp_of_core = bfs_radius_components(points[core], r)
    for pos, i in enumerate(core):
        labels[i] = comp_of_core[pos]
    n_comp = comp_of_core.max() + 1
    sizes = [int((comp_of_core == c).sum()) for c in range(n_comp)]
    large = [c for c in range(n_comp) if sizes[c] >= m]
    if not large:
        large = [int(np.argmax(sizes))]
    large_set = set(large)

    # small-component cores attach to the nearest core in a kept component
    kept = [i for i in core if labels[i] in large_set]
    for i in core:
        if labels[i] not in large_set:
            labels[i] = -2  # mark, reassign from the snapshot below
    for i in range(n):
        if labels[i] == -2:
            labels[i] = labels[kept[nearest_in_pool(points, i, kept)]]

    # non-core points attach to the nearest point labeled so far
    pool = [i for i in range(n) if labels[i] >= 0]
    assign = {}
    for i in range(n):
        if labels[i] < 0:
            assign[i] = labels[pool[nearest_in_pool(points, i, pool)]]
    for i, lab in assign.items():
        labels[i] = lab

    # re-index to 0..K-1 by order of kept component id
    remap = {c: k for k, c in enumerate(sorted(large))}
    return np.array([remap[c] for c in labels], dtype=np.int64)


def exhaustive_matching_distance(a_sets, b_sets, weights=None):
    """Min over permutations of summed symmetric-difference measures."""
    k = len(a_sets)
    assert len(b_sets) == k

    def measure(s):
        if weights is None:
            return float(len(s))
        return float(sum(weights[i] for i in s))

    a_sets = [set(map(int, s)) for s in a_sets]
    b_sets = [set(map(int, s)) for s in b_sets]
    costs = [[measure(a ^ b) for b in b_sets] for a in a_sets]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        total = sum(costs[i][perm[i]] for i in range(k))
        best = min(best, total)
    return best


def brute_knn(points, k):
    """All-pairs exact kNN with (distance, index) ordering."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        cand = sorted(
            (float(((points[i] - points[j]) ** 2).sum()), j)
            for j in range(n)
            if j != i
        )
        out[i] = [j for _, j in cand[:k]]
    return out


def local_maxima_count(adjacency, weights):
    """Points with no neighbor that precedes them in (weight desc, index) order."""
    n = len(weights)
    count = 0
    for i in range(n):
        is_peak = True
        for j in adjacency[i]:
            if (weights[j], -j) > (weights[i], -i):
                is_peak = False
                break
        if is_peak:
            count += 1
    return count


def exhaustive_bottleneck(values, neighbors, a_nodes, b_nodes):
    """Max over simple paths of the min value along the path (tiny graphs)."""
    best = -np.inf

    def dfs(node, visited, current_min):
        nonlocal best
        if node in b_nodes:
            best = max(best, current_min)
            return
        for nb in neighbors(node):
            if nb not in visited:
                dfs(nb, visited | {nb}, min(current_min, values[nb]))

    for start in a_nodes:
        dfs(start, {start}, values[start])
    return best
