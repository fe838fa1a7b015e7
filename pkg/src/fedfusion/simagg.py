"""Similarity matrices, temperature-softmax peer weights and parameter averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fedfusion.errors import ConfigError
from fedfusion.nncore import ParamSet

ZERO_NORM = 1e-12


@dataclass
class SimilarityWeights:
    s: np.ndarray  # raw cosine similarities
    alpha: np.ndarray  # row-stochastic softmax weights
    temperature: float
    degenerate: list[int] = field(default_factory=list)  # clients with ~zero latents

    @property
    def n(self) -> int:
        return self.alpha.shape[0]


def degenerate_latents(latents: list[np.ndarray]) -> list[int]:
    return [i for i, v in enumerate(latents) if np.linalg.norm(v) < ZERO_NORM]


def cosine_matrix(latents: list[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarities.

    A zero-norm vector gets similarity 0 to everyone else and 1 to itself.
    """
    if not latents:
        raise ValueError("need at least one latent vector")
    V = np.vstack([np.asarray(v, dtype=np.float64) for v in latents])
    norms = np.linalg.norm(V, axis=1)
    degenerate = np.flatnonzero(norms < ZERO_NORM)
    safe = np.where(norms < ZERO_NORM, 1.0, norms)
    U = V / safe[:, None]
    U[degenerate] = 0.0
    S = U @ U.T
    S = np.clip(S, -1.0, 1.0)
    np.fill_diagonal(S, 1.0)
    return S


def softmax_weights(s: np.ndarray, temperature: float) -> SimilarityWeights:
    if temperature <= 0:
        raise ConfigError(f"similarity_temperature must be > 0, got {temperature}")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {s.shape}")
    scaled = s / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled)
    alpha = e / e.sum(axis=1, keepdims=True)
    return SimilarityWeights(s=s, alpha=alpha, temperature=temperature)


def similarity_weights(latents: list[np.ndarray], temperature: float) -> SimilarityWeights:
    w = softmax_weights(cosine_matrix(latents), temperature)
    w.degenerate = degenerate_latents(latents)
    return w


def weighted_param_avg(params: list[ParamSet], weights) -> ParamSet:
    """Entrywise convex combination ``sum_j w_j * params_j``.

    Evaluated as ``p_a + sum_{j != a} w_j * (p_j - p_a)`` with ``a`` the first
    largest weight, skipping zero weights. Same value in exact arithmetic, but
    fixed points stay bitwise exact: equal inputs return the input, a one-hot
    weight returns its entry.
    """
    if not params:
        raise ValueError("nothing to average")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(params),):
        raise ValueError(f"{len(params)} parameter sets but {w.size} weights")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got sum {w.sum()!r}")
    ref = params[0]
    for p in params[1:]:
        ref.check_compatible(p)
    a = int(np.argmax(w))
    anchor = params[a]
    out = []
    for name in ref:
        acc = anchor[name].copy()
        for j, (wj, p) in enumerate(zip(w, params)):
            if j != a and wj != 0.0:
                acc = acc + wj * (p[name] - anchor[name])
        out.append((name, acc))
    return ParamSet(out)


def size_weights(sizes) -> np.ndarray:
    n = np.asarray(sizes, dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError("client sizes must be positive")
    return n / n.sum()


def size_weighted_avg(params: list[ParamSet], sizes) -> ParamSet:
    return weighted_param_avg(params, size_weights(sizes))


def per_client_global_classifiers(
    classifiers: list[ParamSet], w: SimilarityWeights
) -> list[ParamSet]:
    if len(classifiers) != w.n:
        raise ValueError(f"{len(classifiers)} classifiers but {w.n}x{w.n} weights")
    return [weighted_param_avg(classifiers, w.alpha[i]) for i in range(w.n)]
