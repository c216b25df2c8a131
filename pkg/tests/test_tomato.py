import numpy as np
import pytest

from mdbc.errors import InputError
from mdbc.tomato import (
    KnnGraph,
    density_weights,
    knn_graph,
    symmetrized_adjacency,
    tomato_cluster,
)
from oracles import brute_knn, local_maxima_count


def path_graph(n):
    """kNN-style graph for a 1-D chain: each node lists its line neighbors."""
    neighbors = []
    for i in range(n):
        nbs = [j for j in (i - 1, i + 1) if 0 <= j < n]
        neighbors.append((nbs + [max(0, i - 2)])[:2])
    k = min(2, n - 1)
    return KnnGraph(k=k, neighbors=np.array([row[:k] for row in neighbors], dtype=np.int64))


class TestKnnGraph:
    def test_three_collinear_points_tie_rule(self):
        points = np.array([[0.0], [1.0], [2.0]])
        graph = knn_graph(points, 1)
        # the middle point is equidistant to both ends; smaller index wins
        assert graph.neighbors[1, 0] == 0

    def test_complete_graph_when_k_is_n_minus_1(self):
        points = np.random.default_rng(0).standard_normal((8, 2))
        graph = knn_graph(points, 7)
        adj = symmetrized_adjacency(graph)
        for i in range(8):
            assert len(adj[i]) == 7

    @pytest.mark.parametrize("trial", range(8))
    def test_matches_brute_force(self, trial):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(10, 200))
        points = rng.standard_normal((n, int(rng.integers(1, 4))))
        k = int(rng.integers(1, min(10, n - 1)))
        graph = knn_graph(points, k)
        assert np.array_equal(graph.neighbors, brute_knn(points, k))

    def test_no_self_edges(self):
        points = np.random.default_rng(1).standard_normal((30, 2))
        graph = knn_graph(points, 5)
        for i in range(30):
            assert i not in graph.neighbors[i]

    def test_too_few_points_raises(self):
        with pytest.raises(InputError):
            knn_graph(np.zeros((3, 2)), 3)


class TestDensityWeights:
    def test_constant_logdens_uniform(self):
        w = density_weights(np.full(10, -3.7))
        assert np.allclose(w, 0.1)

    def test_two_point_example(self):
        w = density_weights(np.array([0.0, np.log(3.0)]))
        assert np.allclose(w, [0.25, 0.75])

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        logdens = rng.standard_normal(50)
        assert np.allclose(density_weights(logdens), density_weights(logdens + 123.4))

    def test_positive_and_normalized(self):
        w = density_weights(np.array([-700.0, 0.0, 5.0]))
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(1.0)


class TestTomato:
    def test_single_peak_single_cluster(self):
        graph = path_graph(7)
        weights = np.array([0.1, 0.2, 0.5, 1.0, 0.5, 0.2, 0.1])
        for tau in [0.0, 0.3, 10.0]:
            lab, _ = tomato_cluster(graph, weights, tau)
            assert lab.n_clusters == 1

    def test_two_peak_merge_rule_hand_trace(self):
        # peaks 1.0 and 0.8 with a 0.3 valley; prominence of the second is 0.5
        graph = path_graph(5)
        weights = np.array([0.2, 1.0, 0.3, 0.8, 0.2])
        lab, pairs = tomato_cluster(graph, weights, tau_merge=0.6)
        assert lab.n_clusters == 1
        assert any(p.birth == 0.8 and p.death == 0.3 for p in pairs)
        lab2, pairs2 = tomato_cluster(graph, weights, tau_merge=0.4)
        assert lab2.n_clusters == 2
        assert any(p.birth == 0.8 and p.death == 0.3 for p in pairs2)

    def test_tau_zero_counts_local_maxima(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((60, 2))
        weights = density_weights(rng.standard_normal(60))
        graph = knn_graph(points, 4)
        lab, _ = tomato_cluster(graph, weights, 0.0)
        adj = symmetrized_adjacency(graph)
        assert lab.n_clusters == local_maxima_count(adj, weights)

    def test_infinite_tau_gives_graph_components(self):
        rng = np.random.default_rng(4)
        blob1 = rng.standard_normal((20, 2))
        blob2 = rng.standard_normal((20, 2)) + [50.0, 0.0]
        points = np.vstack([blob1, blob2])
        graph = knn_graph(points, 3)
        weights = density_weights(rng.standard_normal(40))
        lab, _ = tomato_cluster(graph, weights, np.inf)

        # independent component count by BFS on the symmetrized adjacency
        adj = symmetrized_adjacency(graph)
        seen = set()
        n_comp = 0
        for start in range(40):
            if start in seen:
                continue
            n_comp += 1
            stack = [start]
            while stack:
                node = stack.pop()
                if node in seen:
                    continue
                seen.add(node)
                stack.extend(int(j) for j in adj[node])
        assert n_comp >= 2
        assert lab.n_clusters == n_comp

    @pytest.mark.parametrize("trial", range(10))
    def test_cluster_count_nonincreasing_in_tau(self, trial):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(20, 120))
        points = rng.standard_normal((n, 2))
        graph = knn_graph(points, int(rng.integers(2, 8)))
        weights = density_weights(rng.standard_normal(n))
        taus = np.sort(rng.uniform(0, weights.max(), size=5))
        counts = [tomato_cluster(graph, weights, float(t))[0].n_clusters for t in taus]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_diagram_birth_ge_death(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((80, 2))
        graph = knn_graph(points, 5)
        weights = density_weights(rng.standard_normal(80))
        _, pairs = tomato_cluster(graph, weights, 0.001)
        assert pairs
        for p in pairs:
            assert p.birth >= p.death >= 0
            assert p.prominence == p.birth - p.death

    def test_global_max_never_dies(self):
        rng = np.random.default_rng(6)
        points = rng.standard_normal((60, 2))
        graph = knn_graph(points, 5)
        weights = density_weights(rng.standard_normal(60))
        _, pairs = tomato_cluster(graph, weights, np.inf)
        top = weights.max()
        assert all(p.birth < top for p in pairs)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        n = 70
        points = rng.standard_normal((n, 2))
        logdens = rng.standard_normal(n)
        graph = knn_graph(points, 5)
        lab, _ = tomato_cluster(graph, density_weights(logdens), 0.002)

        perm = rng.permutation(n)
        graph_p = knn_graph(points[perm], 5)
        lab_p, _ = tomato_cluster(graph_p, density_weights(logdens[perm]), 0.002)

        def canonical(labels):
            seen, out = {}, np.empty(len(labels), dtype=np.int64)
            for i, v in enumerate(labels):
                out[i] = seen.setdefault(v, len(seen))
            return out

        assert np.array_equal(canonical(lab.labels[perm]), canonical(lab_p.labels))

    def test_every_point_assigned(self):
        rng = np.random.default_rng(8)
        points = rng.standard_normal((50, 3))
        graph = knn_graph(points, 4)
        lab, _ = tomato_cluster(graph, density_weights(rng.standard_normal(50)), 0.01)
        assert np.all(lab.labels >= 0)
        assert set(np.unique(lab.labels)) == set(range(lab.n_clusters))

    def test_rejects_nonpositive_weights(self):
        graph = path_graph(4)
        with pytest.raises(InputError):
            tomato_cluster(graph, np.array([0.1, 0.0, 0.2, 0.3]), 0.1)

    def test_persistence_csv_roundtrip(self, tmp_path):
        from mdbc.tomato import load_persistence_csv, save_persistence_csv

        rng = np.random.default_rng(9)
        points = rng.standard_normal((40, 2))
        graph = knn_graph(points, 4)
        _, pairs = tomato_cluster(graph, density_weights(rng.standard_normal(40)), 0.001)
        save_persistence_csv(tmp_path / "pairs.csv", pairs)
        loaded = load_persistence_csv(tmp_path / "pairs.csv")
        assert loaded == pairs
