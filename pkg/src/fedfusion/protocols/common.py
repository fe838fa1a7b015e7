"""Shared protocol plumbing: configs, client state, traces and the message log."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from fedfusion.data.dataset import ClientDataset
from fedfusion.errors import ConfigError
from fedfusion.model import ClientModel, evaluate, split_indices
from fedfusion.nncore import ParamSet
from fedfusion.simagg import SimilarityWeights

STREAMS = {
    "init": 1, "batch": 2, "search": 3, "val": 4, "guard": 5, "rep": 6,
    "participation": 7, "aug": 8, "pretext": 9, "head": 10, "global": 11,
}


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent stream keyed by (seed, client, round, purpose, ...)."""
    ints = [int(seed)] + [STREAMS[k] if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(ints)


DEFAULT_MENU = ((8,), (16, 8), (32, 16, 8))


@dataclass
class DivEnConfig:
    rounds: int = 6  # R; communication rounds run 1..R-1
    epochs_init: int = 20
    epochs_low: int = 5
    pull_lambda: float = 0.01
    similarity_temperature: float = 1.0
    variant: str = "diven"  # diven | diven_mix | diven_c
    guard_enabled: bool = True
    lr: float = 0.05
    momentum: float = 0.0
    batch_size: int | None = None  # None = full batch
    encoder_menu: tuple[tuple[int, ...], ...] = DEFAULT_MENU
    search_budget: int = 3
    search_epochs: int = 20
    val_fraction: float = 0.2
    participation_fraction: float = 1.0
    min_sim: float = 0.8
    cluster_max_size: int = 2

    def validate(self) -> None:
        if self.rounds < 2:
            raise ConfigError("rounds must be >= 2")
        if not self.epochs_init >= self.epochs_low >= 1:
            raise ConfigError("need epochs_init >= epochs_low >= 1")
        if self.pull_lambda < 0:
            raise ConfigError("pull_lambda must be >= 0")
        if self.similarity_temperature <= 0:
            raise ConfigError("similarity_temperature must be > 0")
        if self.variant not in ("diven", "diven_mix", "diven_c"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.participation_fraction <= 1:
            raise ConfigError("participation_fraction must be in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if not self.encoder_menu:
            raise ConfigError("encoder_menu must be nonempty")
        latent = {m[-1] for m in self.encoder_menu}
        if len(latent) != 1:
            raise ConfigError("every encoder_menu entry must end in the same latent dim")

    @property
    def latent_dim(self) -> int:
        return self.encoder_menu[0][-1]

    def epochs_for(self, r: int) -> int:
        return self.epochs_init if r == 1 else self.epochs_low


@dataclass
class FusionConfig:
    rounds_step1: int = 10
    rounds_step2: int = 10
    local_epochs: int = 1
    pretext_classes: int = 4
    pretext_weight: float = 1.0
    confidence_threshold: float = 0.9
    partial_weight: float = 1.0
    consistency_weight: float = 0.0
    pseudo_label: bool = True
    freeze_unlabelled_encoder: bool = True
    include_frozen_in_average: bool = True
    lr: float = 0.1
    momentum: float = 0.0
    batch_size: int | None = 64
    encoder_layers: tuple[int, ...] = (64, 32)
    strong_dropout: float = 0.2
    strong_noise: float = 0.1
    tabular_sigma: float = 0.05

    def validate(self) -> None:
        if self.rounds_step1 < 0 or self.rounds_step2 < 1:
            raise ConfigError("need rounds_step1 >= 0 and rounds_step2 >= 1")
        if self.pretext_classes not in (2, 4):
            raise ConfigError("pretext_classes must be 2 or 4")
        if not 0 < self.confidence_threshold < 1:
            raise ConfigError("confidence_threshold must be in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")


@dataclass
class TraceRecord:
    phase: str
    round: int
    client: int
    train_loss: float | None = None
    val_metric: float | None = None
    test_metric: float | None = None  # only on the closing "final" records
    mask_rate: float | None = None
    n_samples: int | None = None
    guard_events: list[str] = field(default_factory=list)
    param_norms: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


ALLOWED_MESSAGES = {"params", "latent", "count", "status", "metric"}


class MessageLog:
    """Records every value that crosses a client boundary.

    Only parameter blocks, pooled latents, counts, status tags and scalar
    metrics are legal; anything else raises.
    """

    def __init__(self):
        self.messages: list[tuple[str, int, int, str, str, object]] = []

    def send(self, phase: str, rnd: int, client: int, kind: str, name: str, payload) -> None:
        if kind not in ALLOWED_MESSAGES:
            raise ValueError(f"illegal message kind {kind!r}")
        if kind == "params" and not isinstance(payload, ParamSet):
            raise TypeError("params messages must carry a ParamSet")
        if kind == "latent" and np.ndim(payload) != 1:
            raise TypeError("latent messages must carry one pooled vector")
        if kind in ("count", "status", "metric") and np.ndim(payload) != 0:
            raise TypeError(f"{kind} messages must be scalar")
        self.messages.append((phase, rnd, client, kind, name, payload))


@dataclass
class Hooks:
    """Optional observers; none of them can influence training."""

    messages: MessageLog | None = None
    dump_params: Callable[[str, int, int, str, ParamSet], None] | None = None
    dump_similarity: Callable[[str, int, SimilarityWeights], None] | None = None
    on_record: Callable[[TraceRecord], None] | None = None

    def send(self, phase, rnd, client, kind, name, payload) -> None:
        if self.messages is not None:
            self.messages.send(phase, rnd, client, kind, name, payload)

    def params(self, phase, rnd, client, name, params) -> None:
        if self.dump_params is not None:
            self.dump_params(phase, rnd, client, name, params)


@dataclass
class ClientState:
    cid: int
    data: ClientDataset
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    model: ClientModel | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.X_train)

    def val_metric(self, model: ClientModel | None = None) -> float:
        m = model or self.model
        if len(self.X_val):
            return evaluate(m, self.X_val, self.y_val)
        return evaluate(m, self.X_train, self.y_train)

    def test_metric(self, model: ClientModel | None = None) -> float:
        m = model or self.model
        if self.data.X_test is not None and len(self.data.X_test):
            return evaluate(m, self.data.X_test, self.data.y_test)
        return self.val_metric(m)


def supervised_states(
    clients: list[ClientDataset], seed: int, val_fraction: float
) -> list[ClientState]:
    """Labelled rows split into train/validation per client (seeded)."""
    states = []
    for cid, c in enumerate(clients):
        X, y = c.X_lab, c.y_lab
        flags = []
        if len(X) < 10 or val_fraction == 0:
            tr, va = np.arange(len(X)), np.arange(0)
            if val_fraction > 0:
                flags.append("too few rows for a validation split: using training metric")
        else:
            tr, va = split_indices(len(X), val_fraction, rng_for(seed, cid, "val"))
        states.append(ClientState(cid, c, X[tr], y[tr], X[va], y[va], flags=flags))
    return states


def param_norms(model: ClientModel) -> dict[str, float]:
    out = {"encoder": model.encoder.norm(), "classifier": model.classifier.norm()}
    if model.pretext is not None:
        out["pretext"] = model.pretext.norm()
    return out


def participants(n: int, fraction: float, seed: int, rnd: int) -> list[int]:
    if fraction >= 1.0:
        return list(range(n))
    k = max(1, int(round(fraction * n)))
    chosen = rng_for(seed, 0, rnd, "participation").choice(n, size=k, replace=False)
    return sorted(int(i) for i in chosen)


@dataclass
class RunResult:
    method: str
    models: list[ClientModel]
    traces: list[TraceRecord]
    client_metrics: list[float]  # final per-client test metric
    extras: dict = field(default_factory=dict)


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
