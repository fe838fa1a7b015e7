"""Feature-space client clustering.

Clients are described by the binary indicator row of their feature subset.
Initial groups come from k-means (K chosen by silhouette); groups whose
members are not all pairwise similar enough get re-clustered while large,
and split to singletons otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations

import numpy as np

from fedfusion.errors import ConfigError


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple[int, ...]
    n_features: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if not idx:
            raise ValueError("feature subset must be nonempty")
        if idx[0] < 0 or idx[-1] >= self.n_features:
            raise ValueError(f"feature index out of range 0..{self.n_features - 1}")
        object.__setattr__(self, "indices", idx)

    @property
    def binary_row(self) -> np.ndarray:
        row = np.zeros(self.n_features)
        row[list(self.indices)] = 1.0
        return row

    def as_set(self) -> frozenset[int]:
        return frozenset(self.indices)


@dataclass
class ClusterAssignment:
    clusters: list[list[int]]
    overlaps: list[list[int]]
    min_sim: float
    flags: list[str] = field(default_factory=list)

    def cluster_of(self, client: int) -> int:
        for k, members in enumerate(self.clusters):
            if client in members:
                return k
        raise KeyError(client)

    def to_dict(self) -> dict:
        return {
            "min_sim": self.min_sim,
            "clusters": [
                {"members": m, "overlap": o} for m, o in zip(self.clusters, self.overlaps)
            ],
            "flags": self.flags,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def singletons(cls, subsets: list[FeatureSubset], min_sim: float = 0.8) -> ClusterAssignment:
        return cls(
            [[i] for i in range(len(subsets))], [list(s.indices) for s in subsets], min_sim
        )


def jaccard(a: FeatureSubset | frozenset, b: FeatureSubset | frozenset) -> float:
    sa = a.as_set() if isinstance(a, FeatureSubset) else frozenset(a)
    sb = b.as_set() if isinstance(b, FeatureSubset) else frozenset(b)
    if not sa or not sb:
        raise ValueError("jaccard needs nonempty sets")
    return len(sa & sb) / len(sa | sb)


def binary_matrix(subsets: list[FeatureSubset]) -> np.ndarray:
    return np.vstack([s.binary_row for s in subsets])


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, K):
        d = _sq_dists(X, np.array(centers)).min(axis=1)
        total = d.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d / total)])
    return np.array(centers, dtype=np.float64)


def kmeans_binary(
    W: np.ndarray, K: int, seed: int, n_init: int = 10, max_iter: int = 100
) -> tuple[np.ndarray, float]:
    """Lloyd's k-means on binary rows (squared Euclidean, k-means++ seeding).

    Returns (labels, inertia) of the best of ``n_init`` restarts. Empty
    clusters are re-seeded with the point farthest from its centroid, so every
    label 0..K-1 is used whenever W has at least K distinct rows.
    """
    W = np.asarray(W, dtype=np.float64)
    n = len(W)
    if not 1 <= K <= n:
        raise ValueError(f"K must be in 1..{n}, got {K}")
    rng = np.random.default_rng([seed, 9101, K])
    best = None
    for _ in range(n_init):
        C = _kmeans_pp(W, K, rng)
        labels = np.full(n, -1)
        for _ in range(max_iter):
            d = _sq_dists(W, C)
            new = d.argmin(axis=1)
            for k in range(K):
                if not np.any(new == k):
                    far = int(d[np.arange(n), new].argmax())
                    new[far] = k
                    d[far] = 0.0
            if np.array_equal(new, labels):
                break
            labels = new
            C = np.vstack([W[labels == k].mean(axis=0) for k in range(K)])
        inertia = float(_sq_dists(W, C)[np.arange(n), labels].sum())
        if best is None or inertia < best[1] - 1e-12:
            best = (labels.copy(), inertia)
    return _canonical(best[0]), best[1]


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel so clusters are numbered by first appearance."""
    mapping: dict[int, int] = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels])


def silhouette(W: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette with Euclidean distance; singleton members score 0."""
    W = np.asarray(W, dtype=np.float64)
    D = np.sqrt(_sq_dists(W, W))
    ks = np.unique(labels)
    if len(ks) < 2:
        return 0.0
    vals = []
    for i in range(len(W)):
        own = labels == labels[i]
        if own.sum() == 1:
            vals.append(0.0)
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == k].mean() for k in ks if k != labels[i])
        m = max(a, b)
        vals.append(0.0 if m == 0 else (b - a) / m)
    return float(np.mean(vals))


def choose_k(W: np.ndarray, seed: int, k_max: int = 8) -> tuple[int, np.ndarray]:
    """K in 2..min(k_max, n-1) by silhouette; elbow (largest inertia drop) breaks ties."""
    W = np.asarray(W, dtype=np.float64)
    n = len(W)
    distinct = len(np.unique(W, axis=0))
    if distinct <= 1:
        return 1, np.zeros(n, dtype=int)
    if n <= 2:
        return n, np.arange(n)
    upper = min(k_max, n - 1, distinct)
    if upper < 2:
        upper = 2
    results = []
    prev_inertia = kmeans_binary(W, 1, seed)[1]
    for K in range(2, upper + 1):
        labels, inertia = kmeans_binary(W, K, seed)
        results.append((silhouette(W, labels), prev_inertia - inertia, K, labels))
        prev_inertia = inertia
    best_sil = max(r[0] for r in results)
    tied = [r for r in results if r[0] >= best_sil - 1e-12]
    pick = max(tied, key=lambda r: (r[1], -r[2]))
    return pick[2], pick[3]


def min_pairwise_jaccard(members: list[int], subsets: list[FeatureSubset]) -> float:
    if len(members) < 2:
        return 1.0
    return min(jaccard(subsets[a], subsets[b]) for a, b in combinations(members, 2))


def overlap_features(members: list[int], subsets: list[FeatureSubset]) -> list[int]:
    if not members:
        raise ValueError("cluster must be nonempty")
    return sorted(reduce(lambda acc, i: acc & subsets[i].as_set(), members[1:],
                         subsets[members[0]].as_set()))


def refine_clusters(
    initial: list[list[int]],
    subsets: list[FeatureSubset],
    min_sim: float = 0.8,
    max_size: int = 2,
    seed: int = 0,
) -> ClusterAssignment:
    """Recursive refinement until every multi-client cluster meets ``min_sim``.

    A failing cluster larger than ``max_size`` is re-clustered with k-means;
    a failing cluster of at most ``max_size`` members is split to singletons.
    """
    if not 0 < min_sim <= 1:
        raise ConfigError(f"min_sim must be in (0, 1], got {min_sim}")
    W = binary_matrix(subsets)
    flags: list[str] = []
    final: list[list[int]] = []

    def visit(members: list[int], depth: int) -> None:
        members = sorted(int(m) for m in members)
        if len(members) == 1:
            final.append(members)
            return
        if min_pairwise_jaccard(members, subsets) >= min_sim:
            if overlap_features(members, subsets):
                final.append(members)
            else:
                flags.append(f"empty overlap in cluster {members}: split to singletons")
                final.extend([m] for m in members)
            return
        if len(members) <= max_size:
            final.extend([m] for m in members)
            return
        _, labels = choose_k(W[members], seed + depth)
        groups = [[members[i] for i in np.flatnonzero(labels == k)] for k in np.unique(labels)]
        if len(groups) < 2:
            final.extend([m] for m in members)
            return
        for g in groups:
            visit(g, depth + 1)

    for group in initial:
        visit(list(group), 0)
    final.sort(key=lambda m: m[0])
    overlaps = [overlap_features(m, subsets) for m in final]
    return ClusterAssignment(final, overlaps, min_sim, flags)


def cluster_clients(
    subsets: list[FeatureSubset], min_sim: float = 0.8, seed: int = 0, max_size: int = 2
) -> ClusterAssignment:
    """Full pipeline: binary matrix, silhouette-chosen k-means, refinement, overlaps."""
    W = binary_matrix(subsets)
    if len(subsets) == 1:
        initial = [[0]]
    else:
        _, labels = choose_k(W, seed)
        initial = [[int(i) for i in np.flatnonzero(labels == k)] for k in np.unique(labels)]
    return refine_clusters(initial, subsets, min_sim, max_size, seed)
