"""Similarity search and clustering against brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from venom import selection as sel
from venom.errors import ContractError
from venom.lake import EmbeddingStore
from venom.vectorizer import Embedding


def store_of(vectors, ids=None, version="v"):
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    ids = ids or [f"d{i:03d}" for i in range(len(vectors))]
    store = EmbeddingStore(version, vectors[0].shape[0])
    for dataset_id, z in zip(ids, vectors):
        store.add(Embedding(dataset_id, z, version))
    return store


def oracle_top_fraction(z_o, store, method, fraction):
    """Exhaustive O(N^2)-ish sort oracle, independent of the implementation."""
    entries = []
    for dataset_id in store.ids():
        z = store.get(dataset_id).z
        if method == "cosine":
            score = float(np.dot(z_o, z) / (np.linalg.norm(z_o) * np.linalg.norm(z)))
            entries.append((-score, dataset_id, score))
        else:
            score = float(np.linalg.norm(np.asarray(z_o) - z))
            entries.append((score, dataset_id, score))
    entries.sort(key=lambda e: (e[0], e[1]))
    count = max(1, math.ceil(fraction * len(entries)))
    return [(dataset_id, score) for _, dataset_id, score in entries[:count]]


def oracle_silhouette(Z, labels):
    """Brute-force double loop."""
    n = len(Z)
    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            continue
        a = np.mean([np.linalg.norm(Z[i] - Z[j]) for j in same])
        b = math.inf
        for lab in set(labels):
            if lab == labels[i]:
                continue
            others = [j for j in range(n) if labels[j] == lab]
            b = min(b, np.mean([np.linalg.norm(Z[i] - Z[j]) for j in others]))
        denom = max(a, b)
        total += 0.0 if denom == 0.0 else (b - a) / denom
    return total / n


def oracle_best_two_partition(Z):
    """Exhaustively minimize within-cluster sum of squares over 2-partitions."""
    n = len(Z)
    best = None
    for assignment in itertools.product([0, 1], repeat=n):
        if len(set(assignment)) < 2:
            continue
        ss = 0.0
        for lab in (0, 1):
            members = Z[[i for i in range(n) if assignment[i] == lab]]
            ss += ((members - members.mean(axis=0)) ** 2).sum()
        if best is None or ss < best[0]:
            best = (ss, assignment)
    return best


class TestCosine:
    def test_orthogonal(self):
        assert sel.cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_magnitude_invariance(self):
        assert sel.cosine_similarity([2, 2], [1, 1]) == pytest.approx(1.0)

    def test_hand_evaluation(self):
        expected = 32.0 / math.sqrt(14.0 * 77.0)
        assert sel.cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(expected, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ContractError):
            sel.cosine_similarity([0, 0], [1, 0])


class TestEuclidean:
    def test_identical_vectors(self):
        assert sel.euclidean_distance([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_pythagorean(self):
        assert sel.euclidean_distance([0, 0], [3, 4]) == 5.0

    def test_triangle_inequality_over_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            u, v, w = rng.normal(size=(3, 4))
            duw = sel.euclidean_distance(u, w)
            assert duw <= sel.euclidean_distance(u, v) + sel.euclidean_distance(v, w) + 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            sel.euclidean_distance([1, 2], [1, 2, 3])


class TestTopFraction:
    def test_full_fraction_returns_everything_ranked(self):
        rng = np.random.default_rng(1)
        store = store_of(rng.normal(size=(7, 3)))
        params = sel.SelectionParams(method="euclidean", fraction=1.0)
        result = sel.select_top_fraction(rng.normal(size=3), store, params)
        assert len(result.ranked) == 7
        scores = [s for _, s in result.ranked]
        assert scores == sorted(scores)

    def test_ceil_rule(self):
        rng = np.random.default_rng(2)
        store = store_of(rng.normal(size=(10, 3)))
        params = sel.SelectionParams(method="euclidean", fraction=0.25)
        result = sel.select_top_fraction(np.zeros(3), store, params)
        assert len(result.ranked) == 3

    def test_exact_match_ranks_first_with_zero_distance(self):
        rng = np.random.default_rng(3)
        vectors = rng.normal(size=(5, 3))
        store = store_of(vectors)
        params = sel.SelectionParams(method="euclidean", fraction=0.4)
        result = sel.select_top_fraction(vectors[2], store, params)
        assert result.ranked[0] == ("d002", 0.0)

    @pytest.mark.parametrize("method", ["cosine", "euclidean"])
    def test_matches_exhaustive_oracle(self, method):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            store = store_of(rng.normal(size=(50, 4)))
            z_o = rng.normal(size=4)
            params = sel.SelectionParams(method=method, fraction=0.3)
            result = sel.select_top_fraction(z_o, store, params)
            oracle = oracle_top_fraction(z_o, store, method, 0.3)
            assert [i for i, _ in result.ranked] == [i for i, _ in oracle]

    def test_cosine_invariant_under_uniform_positive_scaling(self):
        rng = np.random.default_rng(4)
        vectors = rng.normal(size=(20, 5))
        z_o = rng.normal(size=5)
        params = sel.SelectionParams(method="cosine", fraction=0.3)
        base = sel.select_top_fraction(z_o, store_of(vectors), params)
        scaled = sel.select_top_fraction(z_o * 7.5, store_of(vectors * 7.5), params)
        assert base.ids == scaled.ids

    def test_leave_one_out_excludes_query(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(6, 3))
        store = store_of(vectors)
        params = sel.SelectionParams(method="euclidean", fraction=1.0)
        result = sel.select_top_fraction(vectors[0], store, params, exclude=("d000",))
        assert "d000" not in result.ids
        assert len(result.ranked) == 5

    def test_kmeans_method_rejected_here(self):
        store = store_of(np.eye(3))
        with pytest.raises(ContractError):
            sel.select_top_fraction(np.ones(3), store,
                                    sel.SelectionParams(method="kmeans"))


class TestSilhouette:
    def test_two_pairs_on_a_line(self):
        Z = np.array([[0.0], [1.0], [10.0], [11.0]])
        labels = np.array([0, 0, 1, 1])
        value = sel.silhouette(Z, labels)
        oracle = oracle_silhouette(Z, labels)
        assert value == pytest.approx(oracle, abs=1e-12)
        # outer points score (10.5 - 1) / 10.5, inner points (9.5 - 1) / 9.5
        assert value == pytest.approx((2 * (9.5 / 10.5) + 2 * (8.5 / 9.5)) / 4, abs=1e-9)

    def test_coincident_clusters_score_nonpositive(self):
        Z = np.zeros((4, 2))
        labels = np.array([0, 1, 0, 1])
        assert sel.silhouette(Z, labels) <= 0.0

    def test_separated_clusters_approach_one(self):
        rng = np.random.default_rng(6)
        previous = 0.0
        for gap in (10.0, 100.0, 1000.0):
            a = rng.normal(size=(5, 2))
            b = rng.normal(size=(5, 2)) + gap
            Z = np.vstack([a, b])
            labels = np.array([0] * 5 + [1] * 5)
            value = sel.silhouette(Z, labels)
            assert value > previous
            previous = value
        assert previous > 0.99

    def test_matches_oracle_on_random_labelings(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            Z = rng.normal(size=(rng.integers(5, 30), 3))
            labels = rng.integers(0, 3, size=Z.shape[0])
            if np.unique(labels).size < 2:
                continue
            assert sel.silhouette(Z, labels) == pytest.approx(
                oracle_silhouette(Z, labels), abs=1e-9)

    def test_single_cluster_rejected(self):
        with pytest.raises(ContractError):
            sel.silhouette(np.zeros((3, 2)), np.zeros(3, dtype=int))


FOUR_POINTS = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])


class TestKMeans:
    def test_recovers_optimal_two_partition(self):
        model = sel.kmeans_fit(FOUR_POINTS, s=2, seed=0)
        groups = {tuple(sorted(np.where(model.labels == lab)[0])) for lab in (0, 1)}
        assert groups == {(0, 1), (2, 3)}
        centroids = sorted(map(tuple, model.centroids))
        assert centroids == [(0.0, 0.5), (10.0, 10.5)]
        _, oracle_assignment = oracle_best_two_partition(FOUR_POINTS)
        oracle_groups = {tuple(i for i in range(4) if oracle_assignment[i] == lab)
                         for lab in (0, 1)}
        assert groups == oracle_groups

    def test_s_equals_n_gives_zero_inertia(self):
        rng = np.random.default_rng(8)
        Z = rng.normal(size=(5, 2))
        model = sel.kmeans_fit(Z, s=5, seed=1)
        assert model.inertia == pytest.approx(0.0, abs=1e-18)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(9)
        Z = rng.normal(size=(20, 3))
        a = sel.kmeans_fit(Z, s=3, seed=5)
        b = sel.kmeans_fit(Z, s=3, seed=5)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.centroids, b.centroids)

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(10)
        Z = rng.normal(size=(40, 4))
        model = sel.kmeans_fit(Z, s=4, seed=2)
        trace = model.inertia_trace
        assert all(trace[i + 1] <= trace[i] + 1e-9 for i in range(len(trace) - 1))

    def test_final_assignment_is_fixed_point(self):
        rng = np.random.default_rng(11)
        Z = rng.normal(size=(30, 3))
        model = sel.kmeans_fit(Z, s=3, seed=3)
        d2 = ((Z[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(d2.argmin(axis=1), model.labels)

    def test_centroid_equals_member_mean(self):
        rng = np.random.default_rng(12)
        Z = rng.normal(size=(25, 2))
        model = sel.kmeans_fit(Z, s=3, seed=4)
        for lab in range(3):
            members = Z[model.labels == lab]
            np.testing.assert_allclose(model.centroids[lab], members.mean(axis=0),
                                       atol=1e-9)

    def test_s_larger_than_n_rejected(self):
        with pytest.raises(ContractError):
            sel.kmeans_fit(np.zeros((3, 2)), s=4, seed=0)


class TestChooseS:
    def test_two_blobs_pick_two(self):
        rng = np.random.default_rng(13)
        Z = np.vstack([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 20.0])
        s_star, model, score, _ = sel.choose_s(Z, (2, 4), seed=0)
        assert s_star == 2
        assert score > 0.8

    def test_four_point_case(self):
        s_star, model, score, _ = sel.choose_s(FOUR_POINTS, (2, 3), seed=0)
        assert s_star == 2
        assert score == pytest.approx(oracle_silhouette(FOUR_POINTS, model.labels), abs=1e-9)

    def test_degenerate_identical_points_fall_back_to_low(self):
        Z = np.ones((6, 2))
        s_star, _, score, diagnostics = sel.choose_s(Z, (2, 4), seed=0)
        assert s_star == 2
        assert score == 0.0
        assert any("degenerate" in key for key in diagnostics)


class TestSelectByCluster:
    def make_store(self):
        return store_of(FOUR_POINTS, ids=["p00", "p01", "p10", "p11"])

    def params(self, **kw):
        base = dict(method="kmeans", cluster_range=(2, 3), min_size=1, max_size=4, seed=0)
        base.update(kw)
        return sel.SelectionParams(**base)

    def test_query_near_low_cluster(self):
        result = sel.select_by_cluster(np.array([0.0, 0.4]), self.make_store(), self.params())
        assert sorted(result.ids) == ["p00", "p01"]
        assert result.diagnostics["chosen_s"] == 2

    def test_min_size_adds_nearest_outsider(self):
        result = sel.select_by_cluster(np.array([0.0, 0.4]), self.make_store(),
                                       self.params(min_size=3))
        assert sorted(result.ids) == ["p00", "p01", "p10"]
        assert result.diagnostics["added"] == 1

    def test_max_size_keeps_nearest_to_centroid(self):
        result = sel.select_by_cluster(np.array([0.0, 0.4]), self.make_store(),
                                       self.params(max_size=1))
        # both members are 0.5 from the centroid; the tie breaks by id
        assert result.ids == ["p00"]
        assert result.diagnostics["trimmed"] == 1

    def test_size_bounds_always_hold(self):
        rng = np.random.default_rng(14)
        store = store_of(rng.normal(size=(30, 3)))
        for seed in range(10):
            params = self.params(min_size=4, max_size=7, seed=seed,
                                 cluster_range=(2, 6))
            result = sel.select_by_cluster(rng.normal(size=3), store, params)
            assert 4 <= len(result.ranked) <= 7

    def test_store_smaller_than_min_size_rejected(self):
        store = store_of(np.eye(3))
        with pytest.raises(ContractError):
            sel.select_by_cluster(np.zeros(3), store, self.params(min_size=10))


class TestSerialization:
    def test_csv_and_diagnostics(self, tmp_path):
        result = sel.SelectionResult("q1", "euclidean", [("a", 0.5), ("b", 1.25)],
                                     {"candidates": 2})
        csv_path = tmp_path / "selection.csv"
        diag_path = tmp_path / "diag.txt"
        sel.write_selection(result, csv_path, diag_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "query_id,method,rank,dataset_id,score"
        assert lines[1] == "q1,euclidean,1,a,0.5"
        assert lines[2] == "q1,euclidean,2,b,1.25"
        assert "candidates = 2" in diag_path.read_text()
