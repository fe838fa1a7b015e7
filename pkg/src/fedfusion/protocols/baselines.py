"""Reference methods: independent local training, uniform classifier averaging,
and size-weighted full-model averaging."""

from __future__ import annotations

import numpy as np

from fedfusion.data.augment import weak_aug
from fedfusion.data.dataset import ClientDataset, ClientStatus
from fedfusion.errors import ClientFailure, ConfigError
from fedfusion.model import ClientModel, batches, build_model, evaluate, head_loss_and_grads
from fedfusion.nncore import SGD, LossSpec
from fedfusion.protocols.common import (
    DivEnConfig,
    FusionConfig,
    Hooks,
    RunResult,
    Stopwatch,
    TraceRecord,
    param_norms,
    rng_for,
    supervised_states,
)
from fedfusion.protocols.diven import _train_targets, init_personal_models, select_spec
from fedfusion.protocols.fusion import fusion_spec, initial_global
from fedfusion.model import train_supervised
from fedfusion.simagg import size_weights, weighted_param_avg

BASELINES = ("single", "class_agg", "fedavg")


def run_baseline(
    clients: list[ClientDataset],
    kind: str,
    cfg: DivEnConfig | FusionConfig,
    seed: int = 0,
    hooks: Hooks | None = None,
    initial: ClientModel | None = None,
) -> RunResult:
    """``single``/``class_agg`` follow the DivEn round schedule (R-1 rounds,
    ``epochs_init`` then ``epochs_low``). ``fedavg`` with a FusionConfig runs
    ``rounds_step2`` rounds of weak-view supervised fine-tuning from
    ``initial`` (default: the same random start the two-step pipeline uses).
    """
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}")
    hooks = hooks or Hooks()
    if isinstance(cfg, FusionConfig):
        if kind != "fedavg":
            raise ConfigError("only fedavg runs under a FusionConfig")
        return run_fedavg_finetune(clients, cfg, seed, hooks, initial)
    cfg.validate()
    states = supervised_states(clients, seed, cfg.val_fraction)
    if kind == "fedavg":
        if len({c.feature_subset.indices for c in clients}) != 1:
            raise ConfigError("fedavg needs every client on the same feature set")
        spec = select_spec(states[0], cfg, seed)
        init = build_model(spec, rng_for(seed, 0, "global"))
        for st in states:
            st.model = init.copy()
    else:
        init_personal_models(states, cfg, seed)

    traces = []
    for r in range(1, cfg.rounds):
        for st in states:
            watch = Stopwatch()
            try:
                fit = train_supervised(
                    st.model, st.X_train, _train_targets(st), cfg.epochs_for(r), cfg.lr,
                    rng=rng_for(seed, st.cid, r, "batch"), batch_size=cfg.batch_size,
                    momentum=cfg.momentum,
                )
            except Exception as exc:
                raise ClientFailure(r, st.cid, exc) from exc
            st.model = fit.model
            rec = TraceRecord(kind, r, st.cid, train_loss=fit.epoch_losses[-1],
                              val_metric=st.val_metric(), n_samples=st.n,
                              param_norms=param_norms(st.model), flags=list(st.flags),
                              wall_time=watch.elapsed())
            traces.append(rec)
            if hooks.on_record:
                hooks.on_record(rec)
            hooks.params(kind, r, st.cid, "encoder", st.model.encoder)
            hooks.params(kind, r, st.cid, "classifier", st.model.classifier)
        if kind == "class_agg":
            uniform = np.full(len(states), 1.0 / len(states))
            clf = weighted_param_avg([st.model.classifier for st in states], uniform)
            for st in states:
                hooks.send(kind, r, st.cid, "params", "classifier", st.model.classifier)
                st.model.classifier = clf.copy()
        elif kind == "fedavg":
            w = size_weights([st.n for st in states])
            enc = weighted_param_avg([st.model.encoder for st in states], w)
            clf = weighted_param_avg([st.model.classifier for st in states], w)
            for st in states:
                hooks.send(kind, r, st.cid, "params", "encoder", st.model.encoder)
                hooks.send(kind, r, st.cid, "params", "classifier", st.model.classifier)
                hooks.send(kind, r, st.cid, "count", "n", np.int64(st.n))
                st.model.encoder, st.model.classifier = enc.copy(), clf.copy()
    return RunResult(kind, [st.model for st in states], traces,
                     [st.test_metric() for st in states],
                     extras={"val_metrics": [st.val_metric() for st in states]})


def run_fedavg_finetune(
    clients: list[ClientDataset],
    cfg: FusionConfig,
    seed: int = 0,
    hooks: Hooks | None = None,
    initial: ClientModel | None = None,
) -> RunResult:
    """Supervised FedAvg on the weak view; clients without labels do not train."""
    cfg.validate()
    hooks = hooks or Hooks()
    spec = fusion_spec(clients[0], cfg)
    if initial is None:
        enc, clf = initial_global(spec, seed)
        initial = ClientModel(spec, enc, clf)
    W = initial
    ce = LossSpec("cross_entropy")
    traces = []
    for t in range(1, cfg.rounds_step2 + 1):
        updates = []
        for k, c in enumerate(clients):
            if c.status == ClientStatus.FULLY_UNLABELLED:
                traces.append(TraceRecord("fedavg", t, k, n_samples=c.n,
                                          flags=["no labels: not trained"]))
                continue
            watch = Stopwatch()
            rng = rng_for(seed, k, t, "batch", 2)
            model = W.copy()
            opt_e, opt_h = SGD(cfg.lr, cfg.momentum), SGD(cfg.lr, cfg.momentum)
            X, y = c.X_lab, c.y_lab
            losses = []
            for _ in range(cfg.local_epochs):
                for idx in batches(len(X), cfg.batch_size, rng):
                    value, ge, gh = head_loss_and_grads(model, weak_aug(X[idx], c.image, rng),
                                                        y[idx], ce)
                    model.encoder = opt_e.step(model.encoder, ge)
                    model.classifier = opt_h.step(model.classifier, gh)
                    losses.append(value)
            hooks.send("fedavg", t, k, "params", "encoder", model.encoder)
            hooks.send("fedavg", t, k, "params", "classifier", model.classifier)
            hooks.send("fedavg", t, k, "count", "n", np.int64(c.n))
            hooks.params("fedavg", t, k, "encoder", model.encoder)
            hooks.params("fedavg", t, k, "classifier", model.classifier)
            updates.append((c.n, model))
            traces.append(TraceRecord("fedavg", t, k, train_loss=float(np.mean(losses)),
                                      n_samples=c.n, wall_time=watch.elapsed()))
        w = size_weights([n for n, _ in updates])
        W = ClientModel(spec, weighted_param_avg([m.encoder for _, m in updates], w),
                        weighted_param_avg([m.classifier for _, m in updates], w))
        hooks.params("fedavg", t, -1, "global_encoder", W.encoder)
        hooks.params("fedavg", t, -1, "global_classifier", W.classifier)
        for rec in traces[-len(clients):]:
            rec.val_metric = _metric(W, clients[rec.client])
            rec.param_norms = {"encoder": W.encoder.norm(), "classifier": W.classifier.norm()}
            if hooks.on_record:
                hooks.on_record(rec)
    return RunResult("fedavg", [W] * len(clients), traces,
                     [_metric(W, c) for c in clients], extras={"global": W})


def _metric(W: ClientModel, c: ClientDataset) -> float:
    if c.X_test is not None and len(c.X_test):
        return evaluate(W, c.X_test, c.y_test)
    return evaluate(W, c.X, c.y)
