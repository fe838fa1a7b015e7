"""Weak/strong views and rotation pretext batches.

Images are flattened row-major, channel-last; tabular rows are
recognised by ``meta is None``.
"""

from __future__ import annotations

import numpy as np

from fedfusion.data.dataset import ImageBatchMeta


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _as_images(X: np.ndarray, meta: ImageBatchMeta) -> np.ndarray:
    meta.check(X)
    return X.reshape(len(X), meta.side, meta.side, meta.channels)


def jitter(X: np.ndarray, meta: ImageBatchMeta, rng: np.random.Generator) -> np.ndarray:
    """Translate each image by up to one pixel in each axis, edge-replicated."""
    imgs = _as_images(X, meta)
    n, side = len(imgs), meta.side
    padded = np.pad(imgs, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    dy = rng.integers(-1, 2, size=n)
    dx = rng.integers(-1, 2, size=n)
    out = np.empty_like(imgs)
    for sy in (-1, 0, 1):
        for sx in (-1, 0, 1):
            sel = (dy == sy) & (dx == sx)
            if sel.any():
                out[sel] = padded[sel, 1 - sy:1 - sy + side, 1 - sx:1 - sx + side]
    return out.reshape(n, -1)


def weak_aug(X: np.ndarray, meta: ImageBatchMeta | None, seed=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if meta is None:
        return X.copy()
    return jitter(X, meta, _rng(seed))


def strong_aug(
    X: np.ndarray,
    meta: ImageBatchMeta | None,
    seed=None,
    dropout: float = 0.2,
    noise: float = 0.1,
    tabular_sigma: float = 0.05,
) -> np.ndarray:
    """Jitter, pixel dropout and Gaussian noise for images; Gaussian noise for rows.

    Uses the same draw order as :func:`weak_aug` so that with ``dropout=0``
    and ``noise=0`` both views coincide for a given seed.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = _rng(seed)
    if meta is None:
        if tabular_sigma == 0:
            return X.copy()
        return np.clip(X + rng.normal(scale=tabular_sigma, size=X.shape), 0.0, 1.0)
    out = jitter(X, meta, rng)
    if dropout > 0:
        out = out * (rng.random(out.shape) >= dropout)
    if noise > 0:
        out = out + rng.normal(scale=noise, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def rotate(X: np.ndarray, meta: ImageBatchMeta, quarter_turns: int) -> np.ndarray:
    """Rotate every image counter-clockwise by ``quarter_turns`` * 90 degrees."""
    imgs = _as_images(X, meta)
    return np.rot90(imgs, k=quarter_turns, axes=(1, 2)).reshape(len(X), -1)


def rotation_pretext_batch(
    U: np.ndarray, meta: ImageBatchMeta, v: int, seed=None
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate each image by a seeded multiple of 90 degrees; the label is that multiple."""
    if v not in (2, 4):
        raise ValueError(f"pretext classes must be 2 or 4, got {v}")
    if meta is None:
        raise ValueError("rotation pretext needs square images")
    U = np.asarray(U, dtype=np.float64)
    rng = _rng(seed)
    labels = rng.integers(v, size=len(U))
    out = np.empty_like(U)
    for r in range(v):
        sel = labels == r
        if sel.any():
            out[sel] = rotate(U[sel], meta, r)
    return out, labels.astype(np.int64)
