"""Encoder/classifier composition and local training helpers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from fedfusion.errors import DimensionError
from fedfusion.nncore import (
    SGD,
    LossSpec,
    ParamSet,
    backward,
    forward,
    grads_to_params,
    init_layers,
    layers_to_params,
    loss_from_logits,
    params_to_layers,
    softmax,
    check_finite,
)

Task = Literal["classification", "regression"]


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    encoder_layers: tuple[int, ...]  # hidden widths, last one is the latent dim
    num_outputs: int
    task: Task = "classification"
    classifier_hidden: tuple[int, ...] | None = None  # default (2 * latent,)
    encoder_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(int(w) for w in self.encoder_layers))
        if not self.encoder_layers:
            raise ValueError("encoder needs at least one layer")
        if self.classifier_hidden is None:
            object.__setattr__(self, "classifier_hidden", (2 * self.latent_dim,))
        else:
            object.__setattr__(
                self, "classifier_hidden", tuple(int(w) for w in self.classifier_hidden)
            )
        if self.task == "classification" and self.num_outputs < 2:
            raise ValueError("classification needs at least 2 classes")

    @property
    def latent_dim(self) -> int:
        return self.encoder_layers[-1]

    @property
    def encoder_dims(self) -> list[int]:
        return [self.input_dim, *self.encoder_layers]

    @property
    def classifier_dims(self) -> list[int]:
        return [self.latent_dim, *self.classifier_hidden, self.num_outputs]

    @property
    def encoder_activations(self) -> list[str]:
        return [self.encoder_activation] * len(self.encoder_layers)

    @property
    def classifier_activations(self) -> list[str]:
        return ["relu"] * len(self.classifier_hidden) + ["identity"]

    def default_loss(self) -> LossSpec:
        return LossSpec("cross_entropy" if self.task == "classification" else "mse")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "encoder_layers": list(self.encoder_layers),
            "num_outputs": self.num_outputs,
            "task": self.task,
            "classifier_hidden": list(self.classifier_hidden),
            "encoder_activation": self.encoder_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        d = dict(d)
        d["encoder_layers"] = tuple(d["encoder_layers"])
        if d.get("classifier_hidden") is not None:
            d["classifier_hidden"] = tuple(d["classifier_hidden"])
        return cls(**d)

    def n_params(self) -> int:
        dims = self.encoder_dims
        enc = sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
        dims = self.classifier_dims
        return enc + sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


@dataclass
class ClientModel:
    spec: ModelSpec
    encoder: ParamSet
    classifier: ParamSet
    pretext: ParamSet | None = None

    def copy(self) -> ClientModel:
        return ClientModel(
            self.spec,
            self.encoder.copy(),
            self.classifier.copy(),
            None if self.pretext is None else self.pretext.copy(),
        )

    def params(self) -> ParamSet:
        """All blocks under ``encoder.``/``classifier.``/``pretext.`` names."""
        out = self.encoder.with_prefix("encoder.").merged(self.classifier.with_prefix("classifier."))
        if self.pretext is not None:
            out = out.merged(self.pretext.with_prefix("pretext."))
        return out

    def encoder_layers(self):
        return params_to_layers(self.encoder, self.spec.encoder_activations)

    def classifier_layers(self):
        return params_to_layers(self.classifier, self.spec.classifier_activations)

    def pretext_layers(self):
        if self.pretext is None:
            raise ValueError("model has no pretext head")
        return params_to_layers(self.pretext, pretext_activations(self.pretext))


def pretext_activations(head: ParamSet) -> list[str]:
    n = len(head) // 2
    return ["relu"] * (n - 1) + ["identity"]


def init_encoder(spec: ModelSpec, rng: np.random.Generator) -> ParamSet:
    return layers_to_params(init_layers(spec.encoder_dims, spec.encoder_activations, rng))


def init_classifier(spec: ModelSpec, rng: np.random.Generator) -> ParamSet:
    return layers_to_params(init_layers(spec.classifier_dims, spec.classifier_activations, rng))


def init_pretext(spec: ModelSpec, v: int, rng: np.random.Generator) -> ParamSet:
    dims = [spec.latent_dim, *spec.classifier_hidden, v]
    acts = ["relu"] * len(spec.classifier_hidden) + ["identity"]
    return layers_to_params(init_layers(dims, acts, rng))


def build_model(
    spec: ModelSpec, rng: np.random.Generator, pretext_classes: int | None = None
) -> ClientModel:
    enc = init_encoder(spec, rng)
    clf = init_classifier(spec, rng)
    pre = init_pretext(spec, pretext_classes, rng) if pretext_classes else None
    return ClientModel(spec, enc, clf, pre)


def encode(model: ClientModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"encoder expects {model.spec.input_dim} columns, got shape {X.shape}"
        )
    z, _ = forward(model.encoder_layers(), X)
    return z


def classifier_forward(model: ClientModel, Z: np.ndarray) -> np.ndarray:
    out, _ = forward(model.classifier_layers(), Z)
    return out


def logits(model: ClientModel, X: np.ndarray) -> np.ndarray:
    return classifier_forward(model, encode(model, X))


def predict(model: ClientModel, X: np.ndarray) -> np.ndarray:
    """Class probabilities for classification, raw outputs for regression."""
    out = logits(model, X)
    return softmax(out) if model.spec.task == "classification" else out


def mean_latent(model: ClientModel, X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        raise ValueError("mean_latent needs at least one row")
    return encode(model, X).mean(axis=0)


def evaluate(model: ClientModel, X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy in percent for classification, MAE for regression."""
    out = logits(model, X)
    if model.spec.task == "classification":
        return float(100.0 * np.mean(out.argmax(axis=1) == np.asarray(y)))
    return float(np.mean(np.abs(out.reshape(len(X), -1) - np.asarray(y).reshape(len(X), -1))))


def higher_is_better(task: Task) -> bool:
    return task == "classification"


def score(metric: float, task: Task) -> float:
    """Orientation-free score: larger is always better."""
    return metric if higher_is_better(task) else -metric


def head_loss_and_grads(
    model: ClientModel,
    X: np.ndarray,
    y: np.ndarray,
    loss: LossSpec,
    head: str = "classifier",
    sample_weight: np.ndarray | None = None,
) -> tuple[float, ParamSet, ParamSet]:
    """Loss of head(encoder(X)) and gradients for the encoder and that head."""
    enc_layers = model.encoder_layers()
    head_layers = model.classifier_layers() if head == "classifier" else model.pretext_layers()
    z, enc_cache = forward(enc_layers, X)
    out, head_cache = forward(head_layers, z)
    value, dout = loss_from_logits(out, y, loss, sample_weight)
    check_finite(enc_cache + head_cache, out, value)
    head_grads, dz = backward(head_layers, head_cache, dout)
    enc_grads, _ = backward(enc_layers, enc_cache, dz)
    return value, grads_to_params(enc_grads), grads_to_params(head_grads)


PullFn = Callable[[ParamSet], ParamSet]


@dataclass
class TrainResult:
    model: ClientModel
    epoch_losses: list[float] = field(default_factory=list)


def batches(n: int, batch_size: int | None, rng: np.random.Generator | None):
    """Index batches for one epoch; full batch keeps the natural order."""
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_supervised(
    model: ClientModel,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    loss: LossSpec | None = None,
    rng: np.random.Generator | None = None,
    batch_size: int | None = None,
    classifier_pull: PullFn | None = None,
    momentum: float = 0.0,
) -> TrainResult:
    """Plain local SGD on encoder + classifier.

    ``classifier_pull`` maps the current classifier to an extra gradient added
    to the classifier gradient (the similarity pull of DivEn).
    """
    loss = loss or model.spec.default_loss()
    model = model.copy()
    opt_e, opt_c = SGD(lr, momentum), SGD(lr, momentum)
    losses = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in batches(len(X), batch_size, rng):
            value, g_enc, g_clf = head_loss_and_grads(model, X[idx], y[idx], loss)
            if classifier_pull is not None:
                pull = classifier_pull(model.classifier)
                g_clf = ParamSet((k, v + pull[k]) for k, v in g_clf.items())
            model.encoder = opt_e.step(model.encoder, g_enc)
            model.classifier = opt_c.step(model.classifier, g_clf)
            total += value * len(idx)
            count += len(idx)
        losses.append(total / count)
    return TrainResult(model, losses)


def split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, held-out) index split with ``fraction`` held out."""
    order = rng.permutation(n)
    n_out = int(round(n * fraction))
    return np.sort(order[n_out:]), np.sort(order[:n_out])


@dataclass
class SearchResult:
    spec: ModelSpec
    scores: list[float | None]
    used_training_metric: bool


def search_encoder_details(
    X: np.ndarray,
    y: np.ndarray,
    base: ModelSpec,
    menu: list[tuple[int, ...]],
    budget: int,
    seed: int,
    epochs: int = 30,
    lr: float = 0.1,
    batch_size: int | None = None,
) -> SearchResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not menu:
        raise ValueError("encoder menu is empty")
    rng = np.random.default_rng([seed, 7001])
    if len(X) < 10:
        tr = va = np.arange(len(X))
        flagged = True
    else:
        tr, va = split_indices(len(X), 0.2, rng)
        flagged = False
    candidates = list(range(len(menu)))
    if budget < len(menu):
        candidates = sorted(rng.choice(len(menu), size=budget, replace=False).tolist())
    scores: list[float | None] = [None] * len(menu)
    best = None
    for i in candidates:
        spec = replace(base, encoder_layers=tuple(menu[i]))
        init_rng = np.random.default_rng([seed, 7002, i])
        model = build_model(spec, init_rng)
        fit = train_supervised(
            model, X[tr], y[tr], epochs, lr, rng=np.random.default_rng([seed, 7003, i]),
            batch_size=batch_size,
        )
        s = score(evaluate(fit.model, X[va], y[va]), spec.task)
        scores[i] = s
        key = (-s, spec.n_params(), i)
        if best is None or key < best[0]:
            best = (key, spec)
    return SearchResult(best[1], scores, flagged)


def search_encoder(
    X: np.ndarray,
    y: np.ndarray,
    base: ModelSpec,
    menu: list[tuple[int, ...]],
    budget: int,
    seed: int,
    **kwargs,
) -> ModelSpec:
    """Best menu entry by validation score after a short fixed training budget.

    Ties go to the smaller parameter count, then to menu order.
    """
    return search_encoder_details(X, y, base, menu, budget, seed, **kwargs).spec
