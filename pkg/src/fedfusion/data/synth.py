"""Synthetic generators: Gaussian tabular blobs and domain-shifted digit glyphs."""

from __future__ import annotations

import numpy as np

from fedfusion.data.dataset import FullDataset, ImageBatchMeta
from fedfusion.data.partition import train_test_split
from fedfusion.errors import ConfigError


def _balanced_labels(samples: int, k: int) -> np.ndarray:
    return np.arange(samples) % k


def tabular_generator(
    n_clusters: int, features: int, noise: float, seed: int,
    latent_dim: int = 4, separation: float = 1.5, mirrored: bool = False,
) -> dict:
    """Parameters of the generative model; shared by sampling and the Bayes reference."""
    rng = np.random.default_rng([seed, 5501])
    A = rng.normal(size=(latent_dim, features)) / np.sqrt(latent_dim)
    mu = rng.normal(size=(n_clusters, latent_dim)) * separation
    if mirrored:
        if n_clusters != 2:
            raise ConfigError("mirrored clusters need n_clusters == 2")
        mu[1] = -mu[0]
    return {"A": A, "latent_means": mu, "means": mu @ A, "noise": float(noise),
            "w": rng.normal(size=latent_dim)}


def bayes_accuracy(gen: dict, n: int = 20000, seed: int = 0,
                   features: list[int] | None = None) -> float:
    """Monte-Carlo accuracy (%) of the Bayes rule for equal-prior isotropic blobs.

    With a shared isotropic covariance the posterior argmax is the nearest
    class mean, optionally restricted to a feature subset.
    """
    means = gen["means"] if features is None else gen["means"][:, features]
    k = len(means)
    rng = np.random.default_rng([seed, 5502])
    y = rng.integers(k, size=n)
    X = means[y] + gen["noise"] * rng.normal(size=(n, means.shape[1]))
    d = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float(100.0 * np.mean(d.argmin(axis=1) == y))


def synth_tabular(
    n_clusters: int = 3,
    features: int = 16,
    samples: int = 1000,
    noise: float = 1.0,
    seed: int = 0,
    task: str = "classification",
    latent_dim: int = 4,
    separation: float = 1.5,
    mirrored: bool = False,
    test_fraction: float = 0.0,
) -> FullDataset:
    """Gaussian class blobs pushed through a random linear feature map.

    Regression targets are a linear read-out of a per-sample latent drawn
    around the cluster centres.
    """
    gen = tabular_generator(n_clusters, features, noise, seed, latent_dim, separation, mirrored)
    rng = np.random.default_rng([seed, 5503])
    labels = _balanced_labels(samples, n_clusters)
    rng.shuffle(labels)
    info = {"generator": gen}
    if task == "classification":
        X = gen["means"][labels] + noise * rng.normal(size=(samples, features))
        y = labels.astype(np.int64)
        info["bayes_accuracy"] = bayes_accuracy(gen, seed=seed)
        n_classes = n_clusters
    elif task == "regression":
        z = gen["latent_means"][labels] + rng.normal(size=(samples, latent_dim))
        X = z @ gen["A"] + noise * rng.normal(size=(samples, features))
        y = z @ gen["w"] + noise * rng.normal(size=samples)
        n_classes = None
    else:
        raise ConfigError(f"unknown task {task!r}")
    ds = FullDataset(X, y, [f"f{j}" for j in range(features)], task, n_classes,
                     name="synth_tabular", info=info)
    if test_fraction > 0:
        ds = train_test_split(ds, test_fraction, seed)
    return ds


# seven-segment layout: a top, b top-right, c bottom-right, d bottom,
# e bottom-left, f top-left, g middle
SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}

DOMAIN_TRANSFORMS = ("base", "invert", "lowcontrast", "noisy", "thick")


def render_glyph(digit: int, side: int, thick: int = 1) -> np.ndarray:
    img = np.zeros((side, side))
    m = max(1, side // 6)
    top, mid, bot = m, side // 2, side - 1 - m
    left, right = m + 1, side - 2 - m
    for seg in SEGMENTS[digit]:
        if seg == "a":
            img[top:top + thick, left:right + 1] = 1
        elif seg == "g":
            img[mid:mid + thick, left:right + 1] = 1
        elif seg == "d":
            img[bot - thick + 1:bot + 1, left:right + 1] = 1
        elif seg == "f":
            img[top:mid + 1, left:left + thick] = 1
        elif seg == "b":
            img[top:mid + 1, right - thick + 1:right + 1] = 1
        elif seg == "e":
            img[mid:bot + 1, left:left + thick] = 1
        elif seg == "c":
            img[mid:bot + 1, right - thick + 1:right + 1] = 1
    return img


def _shift(imgs: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Per-image integer translation with zero fill."""
    n, side, _ = imgs.shape
    pad = int(max(np.abs(dy).max(initial=0), np.abs(dx).max(initial=0)))
    padded = np.pad(imgs, ((0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(imgs)
    for i in range(n):
        y0, x0 = pad - dy[i], pad - dx[i]
        out[i] = padded[i, y0:y0 + side, x0:x0 + side]
    return out


def apply_domain(imgs: np.ndarray, transform: str, rng: np.random.Generator) -> np.ndarray:
    if transform == "base":
        out = imgs
    elif transform == "invert":
        out = 1.0 - imgs
    elif transform == "lowcontrast":
        out = 0.25 + 0.5 * imgs
    elif transform == "noisy":
        out = imgs + rng.normal(scale=0.25, size=imgs.shape)
    elif transform == "thick":
        out = np.maximum(imgs, np.roll(imgs, 1, axis=2))
    else:
        raise ConfigError(f"unknown domain transform {transform!r}")
    return np.clip(out, 0.0, 1.0)


def synth_digits(
    domains: int = 3,
    side: int = 12,
    samples: int = 600,
    seed: int = 0,
    k: int = 10,
    transforms: list[str] | None = None,
    test_fraction: float = 0.2,
    pixel_noise: float = 0.05,
) -> list[FullDataset]:
    """Per-domain datasets of k glyph classes on side x side grids.

    Every domain shares the label space; domain ``d`` applies
    ``transforms[d]`` (default: cycle through DOMAIN_TRANSFORMS). Each domain
    holds ``samples // k`` images per class.
    """
    if side < 8:
        raise ConfigError("side must be >= 8")
    if not 2 <= k <= 10:
        raise ConfigError("k must be in 2..10")
    transforms = list(transforms) if transforms else [
        DOMAIN_TRANSFORMS[d % len(DOMAIN_TRANSFORMS)] for d in range(domains)
    ]
    if len(transforms) != domains:
        raise ConfigError(f"{domains} domains but {len(transforms)} transforms")
    glyphs = np.stack([render_glyph(c, side) for c in range(k)])
    per_class = samples // k
    out = []
    for d, transform in enumerate(transforms):
        rng = np.random.default_rng([seed, 5601, d])
        y = np.repeat(np.arange(k), per_class)
        n = len(y)
        imgs = glyphs[y] * rng.uniform(0.7, 1.0, size=(n, 1, 1))
        imgs = _shift(imgs, rng.integers(-1, 2, size=n), rng.integers(-1, 2, size=n))
        imgs = np.clip(imgs + rng.normal(scale=pixel_noise, size=imgs.shape), 0.0, 1.0)
        imgs = apply_domain(imgs, transform, rng)
        ds = FullDataset(
            imgs.reshape(n, -1), y.astype(np.int64),
            [f"px{j}" for j in range(side * side)], "classification", k,
            image=ImageBatchMeta(side, 1), name=f"domain{d}-{transform}",
            info={"transform": transform},
        )
        if test_fraction > 0:
            ds = train_test_split(ds, test_fraction, seed + 17 * d)
        out.append(ds)
    return out
