"""Personalised encoders with similarity-weighted classifier sharing.

Round 1 trains ``epochs_init`` epochs and snapshots each client's validation
score and weights for the negative-transfer guard; rounds 2..R-1 train
``epochs_low`` epochs against the anchor built at the end of the previous
round. The clustered variant adds a size-weighted intra-cluster averaging of
encoders and classifiers before the similarity step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fedfusion.clustering import ClusterAssignment
from fedfusion.data.dataset import ClientDataset
from fedfusion.errors import ClientFailure, ConfigError
from fedfusion.model import (
    ClientModel,
    ModelSpec,
    build_model,
    mean_latent,
    score,
    search_encoder_details,
    train_supervised,
)
from fedfusion.nncore import ParamSet, l2_pull_grad
from fedfusion.protocols.common import (
    ClientState,
    DivEnConfig,
    Hooks,
    RunResult,
    Stopwatch,
    TraceRecord,
    param_norms,
    participants,
    rng_for,
    supervised_states,
)
from fedfusion.simagg import (
    per_client_global_classifiers,
    similarity_weights,
    size_weighted_avg,
)


@dataclass
class GuardState:
    threshold_acc: float
    threshold_params: ClientModel


def base_spec(client: ClientDataset, latent_dim: int) -> ModelSpec:
    if client.task == "classification":
        return ModelSpec(client.X.shape[1], (latent_dim,), client.n_classes, "classification")
    return ModelSpec(client.X.shape[1], (latent_dim,), 1, "regression")


def select_spec(state: ClientState, cfg: DivEnConfig, seed: int) -> ModelSpec:
    base = base_spec(state.data, cfg.latent_dim)
    if len(cfg.encoder_menu) == 1:
        return replace(base, encoder_layers=tuple(cfg.encoder_menu[0]))
    result = search_encoder_details(
        state.X_train, state.y_train, base, [tuple(m) for m in cfg.encoder_menu],
        cfg.search_budget, seed=int(rng_for(seed, state.cid, "search").integers(2**31)),
        epochs=cfg.search_epochs, lr=cfg.lr, batch_size=cfg.batch_size,
    )
    if result.used_training_metric:
        state.flags.append("encoder search used the training metric")
    return result.spec


def init_personal_models(states: list[ClientState], cfg: DivEnConfig, seed: int) -> None:
    for st in states:
        spec = select_spec(st, cfg, seed)
        st.model = build_model(spec, rng_for(seed, st.cid, "init"))


def _train_targets(st: ClientState) -> np.ndarray:
    y = st.y_train
    return y.reshape(-1, 1) if st.model.spec.task == "regression" else y


def diven_local_step(
    st: ClientState,
    anchor: ParamSet | None,
    cfg: DivEnConfig,
    epochs: int,
    rng: np.random.Generator,
):
    """Local SGD on CE (or the regression loss) plus the classifier pull.

    The pull is omitted when ``anchor`` is None (first round).
    """
    pull = None
    if anchor is not None:
        lam = cfg.pull_lambda
        pull = lambda clf: l2_pull_grad(clf, anchor, lam)  # noqa: E731
    return train_supervised(
        st.model, st.X_train, _train_targets(st), epochs, cfg.lr, rng=rng,
        batch_size=cfg.batch_size, classifier_pull=pull, momentum=cfg.momentum,
    )


def negative_transfer_guard(
    st: ClientState, guard: GuardState, cfg: DivEnConfig, seed: int
) -> tuple[ClientModel, list[str], float]:
    """Revert-and-retrain when the final score is below the round-1 snapshot.

    The retrained model is kept only if it beats the pre-guard model.
    """
    task = st.model.spec.task
    current = st.val_metric()
    if score(current, task) >= score(guard.threshold_acc, task):
        return st.model, ["guard: no-op"], current
    events = [f"guard: final {current:.4f} below threshold {guard.threshold_acc:.4f}"]
    retrained = train_supervised(
        guard.threshold_params, st.X_train, _train_targets(st), cfg.epochs_low, cfg.lr,
        rng=rng_for(seed, st.cid, "guard"), batch_size=cfg.batch_size, momentum=cfg.momentum,
    ).model
    new = st.val_metric(retrained)
    if score(new, task) > score(current, task):
        events.append(f"guard: kept reverted-retrained model ({new:.4f})")
        return retrained, events, new
    events.append(f"guard: kept pre-guard model (retrained {new:.4f})")
    return st.model, events, current


def _intra_cluster_average(
    states: list[ClientState], assignment: ClusterAssignment, rnd: int, hooks: Hooks
) -> None:
    for k, members in enumerate(assignment.clusters):
        sizes = [states[j].n for j in members]
        enc = size_weighted_avg([states[j].model.encoder for j in members], sizes)
        clf = size_weighted_avg([states[j].model.classifier for j in members], sizes)
        hooks.params("cluster", rnd, k, "encoder", enc)
        hooks.params("cluster", rnd, k, "classifier", clf)
        for j in members:
            states[j].model.encoder = enc.copy()
            states[j].model.classifier = clf.copy()


def _run(
    states: list[ClientState],
    cfg: DivEnConfig,
    seed: int,
    hooks: Hooks,
    method: str,
    assignment: ClusterAssignment | None = None,
) -> RunResult:
    n = len(states)
    ref = states[0].model.classifier
    for st in states[1:]:
        ref.check_compatible(st.model.classifier)
    anchors: list[ParamSet | None] = [None] * n
    guards: dict[int, GuardState] = {}
    traces: list[TraceRecord] = []
    similarity_log = []

    for r in range(1, cfg.rounds):
        epochs = cfg.epochs_for(r)
        for i in participants(n, cfg.participation_fraction, seed, r):
            st = states[i]
            watch = Stopwatch()
            try:
                fit = diven_local_step(st, anchors[i], cfg, epochs, rng_for(seed, i, r, "batch"))
            except Exception as exc:
                raise ClientFailure(r, i, exc) from exc
            st.model = fit.model
            acc = st.val_metric()
            rec = TraceRecord(
                method, r, i, train_loss=fit.epoch_losses[-1], val_metric=acc,
                n_samples=st.n, param_norms=param_norms(st.model), flags=list(st.flags),
            )
            if r == 1:
                guards[i] = GuardState(acc, st.model.copy())
                rec.guard_events.append("guard: threshold captured")
            rec.wall_time = watch.elapsed()
            traces.append(rec)
            if hooks.on_record:
                hooks.on_record(rec)
            hooks.params(method, r, i, "encoder", st.model.encoder)
            hooks.params(method, r, i, "classifier", st.model.classifier)

        if assignment is not None:
            _intra_cluster_average(states, assignment, r, hooks)

        latents = []
        for st in states:
            z = mean_latent(st.model, st.X_train)
            hooks.send(method, r, st.cid, "latent", "mean_latent", z)
            hooks.send(method, r, st.cid, "params", "classifier", st.model.classifier)
            hooks.send(method, r, st.cid, "count", "n", np.int64(st.n))
            latents.append(z)
        w = similarity_weights(latents, cfg.similarity_temperature)
        if w.degenerate:
            for rec in traces[-n:]:
                if rec.client in w.degenerate:
                    rec.flags.append("zero latent: similarity row set to 0")
        if hooks.dump_similarity:
            hooks.dump_similarity(method, r, w)
        similarity_log.append(w)
        anchors = per_client_global_classifiers([st.model.classifier for st in states], w)
        for i, st in enumerate(states):
            hooks.params(method, r, i, "anchor", anchors[i])
            if cfg.variant == "diven_mix":
                st.model.classifier = anchors[i].copy()

    guard_metrics = {}
    if cfg.guard_enabled:
        for st in states:
            if st.cid not in guards:
                continue
            pre = st.val_metric()
            model, events, final = negative_transfer_guard(st, guards[st.cid], cfg, seed)
            st.model = model
            guard_metrics[st.cid] = {"threshold": guards[st.cid].threshold_acc,
                                     "pre_guard": pre, "final": final}
            rec = TraceRecord("guard", cfg.rounds - 1, st.cid, val_metric=final,
                              n_samples=st.n, guard_events=events,
                              param_norms=param_norms(st.model))
            traces.append(rec)
            if hooks.on_record:
                hooks.on_record(rec)

    return RunResult(
        method,
        [st.model for st in states],
        traces,
        [st.test_metric() for st in states],
        extras={
            "similarity": similarity_log,
            "guard": guard_metrics,
            "val_metrics": [st.val_metric() for st in states],
            "specs": [st.model.spec for st in states],
        },
    )


def run_diven(
    clients: list[ClientDataset], cfg: DivEnConfig, seed: int = 0, hooks: Hooks | None = None
) -> RunResult:
    cfg.validate()
    if cfg.variant == "diven_c":
        raise ConfigError("use run_diven_c for the clustered variant")
    states = supervised_states(clients, seed, cfg.val_fraction)
    init_personal_models(states, cfg, seed)
    return _run(states, cfg, seed, hooks or Hooks(), cfg.variant)


def run_diven_c(
    clients: list[ClientDataset],
    cfg: DivEnConfig,
    assignment: ClusterAssignment,
    seed: int = 0,
    hooks: Hooks | None = None,
) -> RunResult:
    """Clustered variant: members train on their cluster's overlapping features.

    One seeded representative per cluster runs the encoder search; every
    member starts from the representative's initial weights.
    """
    cfg.validate()
    members = sorted(i for c in assignment.clusters for i in c)
    if members != list(range(len(clients))):
        raise ConfigError("cluster assignment does not partition the clients")
    projected = list(clients)
    for members_k, overlap in zip(assignment.clusters, assignment.overlaps):
        for j in members_k:
            projected[j] = clients[j].project(overlap)
    states = supervised_states(projected, seed, cfg.val_fraction)
    for k, members_k in enumerate(assignment.clusters):
        if len(members_k) == 1:
            rep = members_k[0]
        else:
            rep = int(rng_for(seed, k, "rep").choice(members_k))
        spec = select_spec(states[rep], cfg, seed)
        init = build_model(spec, rng_for(seed, rep, "init"))
        for j in members_k:
            states[j].model = init.copy()
    result = _run(states, cfg, seed, hooks or Hooks(), "diven_c", assignment)
    result.extras["assignment"] = assignment
    return result
