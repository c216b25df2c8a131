import numpy as np
import pytest

from mdbc.errors import InputError
from mdbc.levelset import Labeling
from mdbc.uncertainty import (
    certainty_scores,
    cluster_count_posterior,
    clustering_distance,
    coclustering_matrix,
    label_agreement,
    labeling_distance,
    load_cocluster,
    partition_sets,
    save_cocluster,
)
from oracles import exhaustive_matching_distance


def lab(values):
    values = np.asarray(values, dtype=np.int64)
    return Labeling(values, int(values.max()) + 1)


def random_labeling(rng, n, k):
    # ensure every cluster non-empty
    values = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    return lab(rng.permutation(values))


class TestCoclustering:
    def test_identical_labelings_give_indicator(self):
        l0 = lab([0, 0, 1, 1, 2])
        m = coclustering_matrix([l0] * 7)
        assert set(np.unique(m.values)) <= {0.0, 1.0}
        expected = (l0.labels[:, None] == l0.labels[None, :]).astype(float)
        assert np.array_equal(m.values, expected)

    def test_hand_counted_example(self):
        # labelings (0,0,1) and (0,1,1): M(0,1)=0.5, M(1,2)=0.5, M(0,2)=0
        m = coclustering_matrix([lab([0, 0, 1]), lab([0, 1, 1])])
        assert m.values[0, 1] == 0.5
        assert m.values[1, 2] == 0.5
        assert m.values[0, 2] == 0.0

    def test_invariant_to_cluster_relabeling(self):
        rng = np.random.default_rng(0)
        labelings = [random_labeling(rng, 30, 3) for _ in range(5)]
        relabeled = []
        for l0 in labelings:
            perm = rng.permutation(l0.n_clusters)
            relabeled.append(lab(perm[l0.labels]))
        a = coclustering_matrix(labelings)
        b = coclustering_matrix(relabeled)
        assert np.array_equal(a.values, b.values)

    def test_symmetric_unit_diagonal_multiples_of_inv_t(self):
        rng = np.random.default_rng(1)
        t = 13
        labelings = [random_labeling(rng, 25, 4) for _ in range(t)]
        m = coclustering_matrix(labelings)
        assert np.array_equal(m.values, m.values.T)
        assert np.all(m.values.diagonal() == 1.0)
        assert np.all((m.values >= 0) & (m.values <= 1))
        scaled = m.values * t
        assert np.allclose(scaled, np.round(scaled), atol=1e-12)

    def test_partitioned_accumulation_identical(self):
        rng = np.random.default_rng(2)
        labelings = [random_labeling(rng, 40, 3) for _ in range(9)]
        a = coclustering_matrix(labelings, n_workers=1)
        b = coclustering_matrix(labelings, n_workers=4)
        assert a.values.tobytes() == b.values.tobytes()

    def test_length_mismatch_raises(self):
        with pytest.raises(InputError):
            coclustering_matrix([lab([0, 1]), lab([0, 1, 1])])

    def test_io_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        m = coclustering_matrix([random_labeling(rng, 20, 3) for _ in range(4)])
        save_cocluster(tmp_path, m)
        loaded = load_cocluster(tmp_path)
        assert loaded.n_resamples == 4
        assert loaded.values.tobytes() == m.values.tobytes()

    def test_certainty_csv_roundtrip(self, tmp_path):
        from mdbc.uncertainty import load_certainty_csv, save_certainty_csv

        scores = np.random.default_rng(4).uniform(0, 0.25, size=17)
        save_certainty_csv(tmp_path / "certainty.csv", scores)
        loaded = load_certainty_csv(tmp_path / "certainty.csv")
        assert loaded.tobytes() == scores.tobytes()


class TestCertainty:
    def test_all_coclustered(self):
        m = coclustering_matrix([lab([0, 0, 0])] * 3)
        assert np.allclose(certainty_scores(m), 0.25)

    def test_half_matrix_formula(self):
        n = 8
        values = np.full((n, n), 0.5)
        np.fill_diagonal(values, 1.0)
        from mdbc.uncertainty import CoClusterMatrix

        scores = certainty_scores(CoClusterMatrix(values=values, n_resamples=2))
        assert np.allclose(scores, 0.25 / n)

    def test_range(self):
        rng = np.random.default_rng(4)
        m = coclustering_matrix([random_labeling(rng, 30, 4) for _ in range(11)])
        s = certainty_scores(m)
        assert np.all((s >= 0) & (s <= 0.25))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        labelings = [random_labeling(rng, 30, 3) for _ in range(7)]
        s = certainty_scores(coclustering_matrix(labelings))
        perm = rng.permutation(30)
        s_perm = certainty_scores(coclustering_matrix([lab(l0.labels[perm]) for l0 in labelings]))
        assert np.allclose(s[perm], s_perm)


class TestCountPosterior:
    def test_single_count(self):
        post = cluster_count_posterior([lab([0, 1, 0])] * 5)
        assert post == {2: 1.0}

    def test_mixed_counts(self):
        post = cluster_count_posterior([lab([0, 1]), lab([0, 1]), lab([0, 1, 2][:2])] + [lab([0, 1, 2])])
        assert post[2] == 0.75 and post[3] == 0.25

    def test_sums_to_one(self):
        rng = np.random.default_rng(6)
        post = cluster_count_posterior(
            [random_labeling(rng, 20, int(rng.integers(1, 6))) for _ in range(40)]
        )
        assert sum(post.values()) == pytest.approx(1.0)


class TestClusteringDistance:
    def test_identity(self):
        a = [np.array([0, 1]), np.array([2, 3, 4])]
        assert clustering_distance(a, a) == 0.0

    def test_permuted_labels_zero(self):
        a = [np.array([0, 1]), np.array([2, 3, 4])]
        b = [np.array([2, 3, 4]), np.array([0, 1])]
        assert clustering_distance(a, b) == 0.0

    def test_counting_measure_hand_example(self):
        # move one point between clusters: symmetric difference counts it twice
        a = [np.array([0, 1, 2]), np.array([3, 4])]
        b = [np.array([0, 1]), np.array([2, 3, 4])]
        assert clustering_distance(a, b) == 2.0

    @pytest.mark.parametrize("trial", range(12))
    def test_matches_exhaustive_permutations(self, trial):
        rng = np.random.default_rng(200 + trial)
        k = int(rng.integers(2, 7))
        n = int(rng.integers(k, 30))
        la = random_labeling(rng, n, k)
        lb = random_labeling(rng, n, k)
        got = labeling_distance(la, lb)
        expected = exhaustive_matching_distance(partition_sets(la), partition_sets(lb))
        assert got == expected

    def test_weighted_atoms(self):
        weights = np.array([1.0, 10.0, 100.0])
        a = [np.array([0]), np.array([1, 2])]
        b = [np.array([0, 1]), np.array([2])]
        # best matching pairs {0}<->{0,1} (cost 10) and {1,2}<->{2} (cost 10)
        assert clustering_distance(a, b, atom_measure=weights) == 20.0

    def test_pad_against_empty(self):
        a = [np.array([0, 1, 2])]
        b = [np.array([0, 1]), np.array([2])]
        # matched pair costs 1, unmatched {2} costs 1 -> total 2
        assert clustering_distance(a, b, pad=True) == 2.0

    def test_unequal_without_pad_raises(self):
        with pytest.raises(InputError):
            clustering_distance([np.array([0])], [np.array([0]), np.array([1])])

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            la = random_labeling(rng, 20, 3)
            lb = random_labeling(rng, 20, 3)
            assert labeling_distance(la, lb) == labeling_distance(lb, la)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            la = random_labeling(rng, 15, 3)
            lb = random_labeling(rng, 15, 3)
            lc = random_labeling(rng, 15, 3)
            dab = labeling_distance(la, lb)
            dbc = labeling_distance(lb, lc)
            dac = labeling_distance(la, lc)
            assert dac <= dab + dbc + 1e-12

    def test_zero_iff_same_partition(self):
        rng = np.random.default_rng(9)
        la = random_labeling(rng, 20, 3)
        perm = np.array([2, 0, 1])
        lb = lab(perm[la.labels])
        assert labeling_distance(la, lb) == 0.0
        lc = lab(np.where(np.arange(20) == 0, (la.labels[0] + 1) % 3, la.labels))
        assert labeling_distance(la, lc) > 0


class TestAgreement:
    def test_perfect_agreement(self):
        l0 = lab([0, 0, 1, 1])
        assert label_agreement(l0, lab([1, 1, 0, 0])) == 1.0

    def test_one_mismatch(self):
        a = lab([0, 0, 1, 1])
        b = lab([0, 0, 1, 0])
        assert label_agreement(a, b) == 0.75
