"""Row/feature partitioning across clients and label-status assignment."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from fedfusion.clustering import FeatureSubset
from fedfusion.data.dataset import ClientDataset, ClientStatus, FullDataset
from fedfusion.errors import ConfigError


def stratified_deal(y: np.ndarray | None, n_parts: int, rng: np.random.Generator,
                    classification: bool = True) -> list[np.ndarray]:
    """Disjoint, exhaustive split of ``range(len(y))`` into ``n_parts`` index arrays.

    For classification every class is shuffled and dealt round-robin, which
    keeps per-part class counts within one of each other.
    """
    n = len(y)
    parts: list[list[int]] = [[] for _ in range(n_parts)]
    if classification:
        offset = 0
        for c in np.unique(y):
            idx = rng.permutation(np.flatnonzero(y == c))
            for j, i in enumerate(idx):
                parts[(offset + j) % n_parts].append(int(i))
            offset += len(idx)
    else:
        for j, i in enumerate(rng.permutation(n)):
            parts[j % n_parts].append(int(i))
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def train_test_split(ds: FullDataset, test_fraction: float, seed: int) -> FullDataset:
    if not 0 <= test_fraction < 1:
        raise ConfigError(f"test_fraction must be in [0, 1), got {test_fraction}")
    rng = np.random.default_rng([seed, 3301])
    is_test = np.zeros(len(ds.X), dtype=bool)
    groups = np.unique(ds.y) if ds.task == "classification" else [None]
    for c in groups:
        idx = np.flatnonzero(ds.y == c) if c is not None else np.arange(len(ds.X))
        idx = rng.permutation(idx)
        is_test[idx[: int(round(len(idx) * test_fraction))]] = True
    return replace(ds, is_test=is_test)


def draw_feature_subsets(
    n_features: int,
    n_clients: int,
    max_features: int,
    seed: int,
    core_size: int = 2,
    n_groups: int | None = None,
) -> list[FeatureSubset]:
    """Shared core plus a seeded uniform draw up to ``max_features`` per client.

    With ``n_groups`` one subset is drawn per group and client ``i`` gets the
    subset of group ``i % n_groups``.
    """
    if not 1 <= core_size <= max_features <= n_features:
        raise ConfigError(
            f"need 1 <= core_size ({core_size}) <= max_features ({max_features}) "
            f"<= n_features ({n_features})"
        )
    rng = np.random.default_rng([seed, 3302])
    core = rng.choice(n_features, size=core_size, replace=False)
    rest = np.setdiff1d(np.arange(n_features), core)
    n_draws = n_groups if n_groups else n_clients
    drawn = []
    for _ in range(n_draws):
        extra = rng.choice(rest, size=max_features - core_size, replace=False)
        drawn.append(FeatureSubset(tuple(np.concatenate([core, extra]).tolist()), n_features))
    if n_groups:
        return [drawn[i % n_groups] for i in range(n_clients)]
    return drawn


def partition_features(
    ds: FullDataset,
    n_clients: int,
    max_features: int,
    seed: int,
    core_size: int = 2,
    n_groups: int | None = None,
    subsets: list[FeatureSubset] | None = None,
) -> list[ClientDataset]:
    """Split rows disjointly across clients and project each onto its features."""
    if n_clients < 1:
        raise ConfigError("n_clients must be >= 1")
    if subsets is None:
        subsets = draw_feature_subsets(
            ds.n_features, n_clients, max_features, seed, core_size, n_groups
        )
    rng = np.random.default_rng([seed, 3303])
    classification = ds.task == "classification"
    train_rows = np.flatnonzero(~ds.is_test)
    test_rows = np.flatnonzero(ds.is_test)
    train_parts = stratified_deal(ds.y[train_rows], n_clients, rng, classification)
    test_parts = stratified_deal(ds.y[test_rows], n_clients, rng, classification)
    clients = []
    for i in range(n_clients):
        cols = list(subsets[i].indices)
        tr, te = train_rows[train_parts[i]], test_rows[test_parts[i]]
        clients.append(
            ClientDataset(
                X=ds.X[np.ix_(tr, cols)],
                y=ds.y[tr],
                feature_subset=subsets[i],
                labelled_mask=np.ones(len(tr), dtype=bool),
                X_test=ds.X[np.ix_(te, cols)] if len(te) else None,
                y_test=ds.y[te] if len(te) else None,
                image=ds.image,
                task=ds.task,
                n_classes=ds.n_classes,
                name=f"client{i}",
            )
        )
    return clients


def domain_clients(domains: list[FullDataset]) -> list[ClientDataset]:
    """One client per domain dataset, holding all of its pixels."""
    out = []
    for i, d in enumerate(domains):
        tr, te = ~d.is_test, d.is_test
        out.append(
            ClientDataset(
                X=d.X[tr],
                y=d.y[tr],
                feature_subset=FeatureSubset(tuple(range(d.n_features)), d.n_features),
                labelled_mask=np.ones(int(tr.sum()), dtype=bool),
                X_test=d.X[te] if te.any() else None,
                y_test=d.y[te] if te.any() else None,
                image=d.image,
                task=d.task,
                n_classes=d.n_classes,
                name=d.name,
            )
        )
    return out


def _parse_plan_entry(entry) -> tuple[ClientStatus | None, float]:
    if isinstance(entry, dict):
        status = entry.get("status")
        frac = float(entry.get("fraction", 1.0 if status in (1, "fully_labelled") else 0.0))
        if isinstance(status, str):
            status = ClientStatus[status.upper()]
        elif status is not None:
            status = ClientStatus(int(status))
        return status, frac
    return None, float(entry)


def assign_statuses(
    clients: list[ClientDataset], plan: list, seed: int
) -> list[ClientDataset]:
    """Draw labelled masks per client, stratified by class.

    ``plan`` holds one entry per client: a labelled fraction, or a dict with
    ``status`` and ``fraction``.
    """
    if len(plan) != len(clients):
        raise ConfigError(f"status plan has {len(plan)} entries for {len(clients)} clients")
    out = []
    for i, (client, entry) in enumerate(zip(clients, plan)):
        status, frac = _parse_plan_entry(entry)
        if not 0.0 <= frac <= 1.0:
            raise ConfigError(f"client {i}: labelled fraction {frac} outside [0, 1]")
        if status == ClientStatus.FULLY_LABELLED and frac < 1.0:
            raise ConfigError(f"client {i}: fully_labelled needs fraction 1.0, got {frac}")
        if status == ClientStatus.FULLY_UNLABELLED and frac > 0.0:
            raise ConfigError(f"client {i}: fully_unlabelled needs fraction 0.0, got {frac}")
        if status == ClientStatus.PARTIALLY_LABELLED and frac in (0.0, 1.0):
            raise ConfigError(f"client {i}: partially_labelled needs 0 < fraction < 1")
        rng = np.random.default_rng([seed, 3304, i])
        mask = np.zeros(client.n, dtype=bool)
        groups = np.unique(client.y) if client.task == "classification" else [None]
        for c in groups:
            idx = np.flatnonzero(client.y == c) if c is not None else np.arange(client.n)
            idx = rng.permutation(idx)
            mask[idx[: int(round(len(idx) * frac))]] = True
        if status == ClientStatus.PARTIALLY_LABELLED and (mask.all() or not mask.any()):
            raise ConfigError(f"client {i}: fraction {frac} leaves no labelled/unlabelled split")
        out.append(replace(client, labelled_mask=mask))
    return out
