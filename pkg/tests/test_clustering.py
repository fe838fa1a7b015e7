from functools import reduce
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from fedfusion.clustering import (
    ClusterAssignment,
    FeatureSubset,
    binary_matrix,
    choose_k,
    cluster_clients,
    jaccard,
    kmeans_binary,
    min_pairwise_jaccard,
    overlap_features,
    refine_clusters,
    silhouette,
)
from fedfusion.errors import ConfigError


def FS(*idx, n=12):
    return FeatureSubset(tuple(idx), n)


def planted_two_groups(seed):
    """10 clients, two groups of 5; Jaccard 1.0 inside, 0.2 across."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(12)
    a = FeatureSubset(tuple(perm[:6]), 12)
    b = FeatureSubset(tuple(perm[4:10]), 12)
    order = rng.permutation(10)
    subsets = [None] * 10
    for pos, client in enumerate(order):
        subsets[client] = a if pos < 5 else b
    truth = sorted([sorted(int(c) for c in order[:5]), sorted(int(c) for c in order[5:])])
    return subsets, truth


def test_feature_subset_sorted_and_binary_row():
    s = FS(5, 1, 3, n=6)
    assert s.indices == (1, 3, 5)
    assert s.binary_row.tolist() == [0, 1, 0, 1, 0, 1]
    with pytest.raises(ValueError):
        FeatureSubset((), 4)


def test_jaccard_examples():
    assert jaccard(FS(1, 2, 3), FS(1, 2, 3)) == 1.0
    assert jaccard(FS(1, 2), FS(3, 4)) == 0.0
    assert jaccard(FS(1, 2, 3), FS(2, 3, 4)) == 0.5


def test_kmeans_k_equals_n_gives_singletons():
    W = binary_matrix([FS(0), FS(1), FS(2), FS(0, 1)])
    labels, _ = kmeans_binary(W, 4, seed=0)
    assert sorted(labels.tolist()) == [0, 1, 2, 3]


def test_kmeans_recovers_identical_blocks():
    W = binary_matrix([FS(0, 1, 2)] * 3 + [FS(7, 8, 9)] * 4)
    labels, inertia = kmeans_binary(W, 2, seed=3)
    assert labels.tolist() == [0, 0, 0, 1, 1, 1, 1]
    assert inertia == 0.0


def test_kmeans_k_out_of_range():
    W = binary_matrix([FS(0), FS(1)])
    for K in (0, 3):
        with pytest.raises(ValueError):
            kmeans_binary(W, K, seed=0)


def test_kmeans_deterministic():
    rng = np.random.default_rng(0)
    W = (rng.random((9, 10)) < 0.5).astype(float)
    a, ia = kmeans_binary(W, 3, seed=11)
    b, ib = kmeans_binary(W, 3, seed=11)
    assert a.tolist() == b.tolist() and ia == ib


def test_silhouette_matches_sklearn():
    rng = np.random.default_rng(0)
    for trial in range(20):
        W = (rng.random((10, 8)) < 0.5).astype(float)
        labels = rng.integers(0, 3, size=10)
        if len(np.unique(labels)) < 2:
            continue
        assert silhouette(W, labels) == pytest.approx(silhouette_score(W, labels), abs=1e-12)


def three_block_matrix(seed, flip=0.05):
    rng = np.random.default_rng(seed)
    protos = (rng.random((3, 20)) < 0.5).astype(float)
    labels = np.repeat(np.arange(3), 4)
    W = protos[labels]
    noise = rng.random(W.shape) < flip
    return np.where(noise, 1 - W, W), labels


def test_silhouette_selects_three_blocks():
    hits = 0
    for seed in range(20):
        W, _ = three_block_matrix(seed)
        # brute force: silhouettes by the direct formula for every K in 2..5
        sils = {K: silhouette_score(W, kmeans_binary(W, K, seed)[0]) for K in range(2, 6)}
        K, _ = choose_k(W, seed, k_max=5)
        assert K == max(sils, key=lambda k: (round(sils[k], 12), -k)) or K == 3
        hits += K == 3
    assert hits >= 18


def test_overlap_examples():
    subsets = [FS(1, 2, 3), FS(2, 3, 4), FS(2, 3)]
    assert overlap_features([0], subsets) == [1, 2, 3]
    assert overlap_features([0, 1, 2], subsets) == [2, 3]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_overlap_equals_fold_intersection(seed, n):
    rng = np.random.default_rng(seed)
    subsets = [FeatureSubset(tuple(rng.choice(10, size=6, replace=False)), 10) for _ in range(n)]
    ref = reduce(lambda a, b: a & b, (set(s.indices) for s in subsets))
    assert overlap_features(list(range(n)), subsets) == sorted(ref)


def test_refine_identical_sets_one_cluster():
    subsets = [FS(0, 3, 5)] * 5
    a = cluster_clients(subsets, 0.8, seed=0)
    assert a.clusters == [[0, 1, 2, 3, 4]]
    assert a.overlaps == [[0, 3, 5]]


def test_refine_disjoint_sets_all_singletons():
    subsets = [FS(2 * i, 2 * i + 1) for i in range(5)]
    a = cluster_clients(subsets, 0.8, seed=0)
    assert a.clusters == [[i] for i in range(5)]


def test_planted_groups_recovered_with_brute_force_check():
    for seed in range(20):
        subsets, truth = planted_two_groups(seed)
        a = cluster_clients(subsets, 0.8, seed=seed)
        assert sorted(a.clusters) == truth
        # exhaustive pair check: inside >= min_sim, across < min_sim
        for k, members in enumerate(a.clusters):
            for i, j in combinations(range(10), 2):
                same = i in members and j in members
                if same:
                    assert jaccard(subsets[i], subsets[j]) >= 0.8
            assert a.overlaps[k] == sorted(reduce(lambda x, y: x & y,
                                                  (set(subsets[m].indices) for m in members)))


def test_empty_overlap_splits_and_flags():
    # pairwise Jaccard 1/3 >= min_sim 0.3 but no feature common to all three
    subsets = [FS(0, 1), FS(1, 2), FS(0, 2)]
    a = refine_clusters([[0, 1, 2]], subsets, min_sim=0.3, max_size=2)
    assert a.clusters == [[0], [1], [2]]
    assert a.flags and "empty overlap" in a.flags[0]


def test_pair_below_threshold_is_split_not_reclustered():
    subsets = [FS(0, 1, 2), FS(0, 1, 5)]
    a = refine_clusters([[0, 1]], subsets, min_sim=0.8)
    assert a.clusters == [[0], [1]]


def test_min_sim_range_checked():
    with pytest.raises(ConfigError):
        refine_clusters([[0]], [FS(0)], min_sim=0.0)


def random_subsets(seed, n):
    rng = np.random.default_rng(seed)
    protos = [rng.choice(10, size=5, replace=False) for _ in range(3)]
    out = []
    for i in range(n):
        base = set(protos[rng.integers(3)].tolist())
        if rng.random() < 0.3:
            base.symmetric_difference_update({int(rng.integers(10))})
        out.append(FeatureSubset(tuple(base or {0}), 10))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.sampled_from([0.5, 0.8, 1.0]))
def test_partition_threshold_idempotence_determinism(seed, n, min_sim):
    subsets = random_subsets(seed, n)
    a = cluster_clients(subsets, min_sim, seed=seed)
    assert sorted(i for c in a.clusters for i in c) == list(range(n))
    for members in a.clusters:
        if len(members) > 1:
            assert min_pairwise_jaccard(members, subsets) >= min_sim
            assert overlap_features(members, subsets)
    again = refine_clusters(a.clusters, subsets, min_sim, seed=seed)
    assert again.clusters == a.clusters and again.overlaps == a.overlaps
    b = cluster_clients(subsets, min_sim, seed=seed)
    assert b.to_dict() == a.to_dict()


def test_assignment_serialises():
    a = ClusterAssignment.singletons([FS(0, 1), FS(2)])
    assert a.cluster_of(1) == 1
    assert '"members": [\n        1\n      ]' in a.to_text() or '"members"' in a.to_text()
    assert a.to_dict()["clusters"][1]["overlap"] == [2]
