"""Dense network core: parameter sets, forward/backward passes, losses and SGD.

Everything is float64 numpy. A network is a list of :class:`DenseLayer`; the
softmax of classification heads lives inside the cross-entropy loss, so the
last layer of a classifier always has identity activation.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from typing import Literal

import numpy as np

from fedfusion.errors import DimensionError, IncompatibleParamsError, NumericError

Activation = Literal["identity", "relu"]
LossKind = Literal["cross_entropy", "mse", "mae"]


class ParamSet(Mapping):
    """Ordered, named collection of parameter arrays.

    The unit of exchange and aggregation. Two sets are aggregation-compatible
    when names, order and shapes all match.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Iterable[tuple[str, np.ndarray]] | Mapping = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, np.ndarray] = {}
        for name, value in items:
            if name in self._entries:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._entries[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._entries.items())
        return f"ParamSet({shapes})"

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, v.shape) for k, v in self._entries.items()]

    def copy(self) -> ParamSet:
        return ParamSet((k, v.copy()) for k, v in self._entries.items())

    def is_compatible(self, other: ParamSet) -> bool:
        return self.shapes() == other.shapes()

    def check_compatible(self, other: ParamSet) -> None:
        if self.is_compatible(other):
            return
        mine, theirs = dict(self.shapes()), dict(other.shapes())
        bad = sorted(
            k for k in set(mine) | set(theirs) if mine.get(k) != theirs.get(k)
        )
        if not bad:
            bad = ["<entry order differs>"]
        raise IncompatibleParamsError(f"incompatible parameter entries: {bad}")

    def with_prefix(self, prefix: str) -> ParamSet:
        return ParamSet((prefix + k, v) for k, v in self._entries.items())

    def select(self, prefix: str, strip: bool = True) -> ParamSet:
        """Entries whose name starts with ``prefix``."""
        n = len(prefix) if strip else 0
        return ParamSet((k[n:], v) for k, v in self._entries.items() if k.startswith(prefix))

    def merged(self, other: ParamSet) -> ParamSet:
        return ParamSet(list(self._entries.items()) + list(other.items()))

    def zeros_like(self) -> ParamSet:
        return ParamSet((k, np.zeros_like(v)) for k, v in self._entries.items())

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self._entries.values())))

    def equal(self, other: ParamSet) -> bool:
        """Bitwise equality of names, shapes and values."""
        return self.is_compatible(other) and all(
            np.array_equal(v, other[k]) for k, v in self._entries.items()
        )


def combine(a: ParamSet, b: ParamSet, op) -> ParamSet:
    a.check_compatible(b)
    return ParamSet((k, op(v, b[k])) for k, v in a.items())


def add(a: ParamSet, b: ParamSet) -> ParamSet:
    return combine(a, b, np.add)


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: Activation = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = "cross_entropy"

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "mse", "mae"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_layers(
    dims: list[int], activations: list[Activation], rng: np.random.Generator
) -> list[DenseLayer]:
    """Layers mapping dims[0] -> dims[1] -> ... with the given activations."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    return [
        DenseLayer(glorot_uniform(i, o, rng), np.zeros(o), act)
        for i, o, act in zip(dims[:-1], dims[1:], activations)
    ]


def layers_to_params(layers: list[DenseLayer], prefix: str = "") -> ParamSet:
    entries = []
    for i, layer in enumerate(layers):
        entries.append((f"{prefix}{i}.weight", layer.weight))
        entries.append((f"{prefix}{i}.bias", layer.bias))
    return ParamSet(entries)


def params_to_layers(
    params: ParamSet, activations: list[Activation], prefix: str = ""
) -> list[DenseLayer]:
    """View a ParamSet as layers (arrays are shared, not copied)."""
    return [
        DenseLayer(params[f"{prefix}{i}.weight"], params[f"{prefix}{i}.bias"], act)
        for i, act in enumerate(activations)
    ]


def forward(layers: list[DenseLayer], X: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the stack; the cache holds (input, pre-activation) per layer."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"input must be 2-D, got shape {h.shape}")
    cache = []
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.in_dim:
            raise DimensionError(
                f"layer {i}: expected {layer.in_dim} input columns, got {h.shape[1]}"
            )
        z = h @ layer.weight + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def backward(
    layers: list[DenseLayer], cache: list, dout: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse pass. Returns per-layer (dW, db) and the gradient w.r.t. the input."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    g = dout
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        h, z = cache[i]
        if layer.activation == "relu":
            g = g * (z > 0.0)
        grads[i] = (h.T @ g, g.sum(axis=0))
        g = g @ layer.weight.T
    return grads, g


def grads_to_params(
    grads: list[tuple[np.ndarray, np.ndarray]], prefix: str = ""
) -> ParamSet:
    entries = []
    for i, (dw, db) in enumerate(grads):
        entries.append((f"{prefix}{i}.weight", dw))
        entries.append((f"{prefix}{i}.bias", db))
    return ParamSet(entries)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _class_targets(y: np.ndarray, k: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        if y.shape[1] != k:
            raise DimensionError(f"one-hot targets have {y.shape[1]} columns, logits {k}")
        return y.astype(np.float64)
    idx = y.astype(np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= k:
        raise DimensionError(f"class index out of range for {k} classes")
    onehot = np.zeros((len(idx), k))
    onehot[np.arange(len(idx)), idx] = 1.0
    return onehot


def loss_from_logits(
    logits: np.ndarray,
    y: np.ndarray,
    spec: LossSpec,
    sample_weight: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Batch loss and its gradient w.r.t. the logits.

    The loss is ``(1/B) * sum_b w_b * l_b`` with ``w_b = 1`` by default, so a
    0/1 weight vector gives a masked loss still normalised by the batch size.
    """
    B = logits.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    w = np.ones(B) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if spec.kind == "cross_entropy":
        target = _class_targets(y, logits.shape[1])
        logp = log_softmax(logits)
        per = -(target * logp).sum(axis=1)
        dlogits = (np.exp(logp) * target.sum(axis=1, keepdims=True) - target) * (w / B)[:, None]
    else:
        target = np.asarray(y, dtype=np.float64).reshape(B, -1)
        if target.shape[1] != logits.shape[1]:
            raise DimensionError(
                f"regression targets have {target.shape[1]} columns, outputs {logits.shape[1]}"
            )
        diff = logits - target
        if spec.kind == "mse":
            per = (diff**2).mean(axis=1)
            dlogits = 2.0 * diff / diff.shape[1] * (w / B)[:, None]
        else:
            per = np.abs(diff).mean(axis=1)
            dlogits = np.sign(diff) / diff.shape[1] * (w / B)[:, None]
    loss = float((w * per).sum() / B)
    return loss, dlogits


def check_finite(cache: list, out: np.ndarray, loss: float) -> None:
    for i, (_, z) in enumerate(cache):
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {i}")
    if not np.all(np.isfinite(out)) or not np.isfinite(loss):
        raise NumericError("non-finite loss")


def loss_and_grad(
    layers: list[DenseLayer],
    X: np.ndarray,
    y: np.ndarray,
    spec: LossSpec,
    sample_weight: np.ndarray | None = None,
    prefix: str = "",
) -> tuple[float, ParamSet]:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty batch")
    if len(np.asarray(y)) != len(X):
        raise DimensionError(f"{len(X)} inputs but {len(np.asarray(y))} targets")
    out, cache = forward(layers, X)
    loss, dout = loss_from_logits(out, y, spec, sample_weight)
    check_finite(cache, out, loss)
    grads, _ = backward(layers, cache, dout)
    return loss, grads_to_params(grads, prefix)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    params.check_compatible(grads)
    return ParamSet((k, v - lr * grads[k]) for k, v in params.items())


class SGD:
    """SGD with optional heavy-ball momentum; state is per parameter name."""

    def __init__(self, lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        if self.momentum == 0.0:
            return sgd_step(params, grads, self.lr)
        params.check_compatible(grads)
        out = []
        for k, v in params.items():
            vel = self.momentum * self._velocity.get(k, 0.0) + grads[k]
            self._velocity[k] = vel
            out.append((k, v - self.lr * vel))
        return ParamSet(out)


def l2_pull_grad(local: ParamSet, anchor: ParamSet, lam: float) -> ParamSet:
    """Gradient of ``lam * sum ||local - anchor||^2``, i.e. ``2*lam*(local - anchor)``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    local.check_compatible(anchor)
    return ParamSet((k, 2.0 * lam * (v - anchor[k])) for k, v in local.items())
