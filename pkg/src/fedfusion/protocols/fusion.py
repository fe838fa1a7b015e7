"""Two-step self-learning: pretext/task encoder pretraining, then fine-tuning
with confidence-filtered pseudo-labels.

Step 1 exchanges encoder blocks only; heads (task head for clients with
labels, rotation head for fully unlabelled clients) never leave the client.
Step 2 exchanges the full (encoder, task head) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedfusion.data.augment import rotation_pretext_batch, strong_aug, weak_aug
from fedfusion.data.dataset import ClientDataset, ClientStatus
from fedfusion.errors import ClientFailure, ConfigError
from fedfusion.model import (
    ClientModel,
    ModelSpec,
    batches,
    build_model,
    evaluate,
    head_loss_and_grads,
    init_classifier,
    init_encoder,
    init_pretext,
)
from fedfusion.nncore import SGD, LossSpec, ParamSet, add, backward, forward, grads_to_params, softmax
from fedfusion.protocols.common import (
    FusionConfig,
    Hooks,
    RunResult,
    Stopwatch,
    TraceRecord,
    rng_for,
)
from fedfusion.simagg import size_weights, weighted_param_avg

CE = LossSpec("cross_entropy")


def fusion_spec(client: ClientDataset, cfg: FusionConfig) -> ModelSpec:
    if client.task != "classification":
        raise ConfigError("the two-step pipeline needs a classification task")
    return ModelSpec(client.X.shape[1], tuple(cfg.encoder_layers), client.n_classes)


@dataclass
class FixMatchOut:
    L1: float
    L2: float
    mask_rate: float
    consistency: float
    g_enc: ParamSet
    g_head: ParamSet


def _scaled(p: ParamSet, c: float) -> ParamSet:
    return ParamSet((k, c * v) for k, v in p.items())


def consistency_loss(
    model: ClientModel, U_weak: np.ndarray, U_strong: np.ndarray
) -> tuple[float, ParamSet]:
    """Mean squared latent distance between two views and its encoder gradient."""
    layers = model.encoder_layers()
    za, ca = forward(layers, U_weak)
    zb, cb = forward(layers, U_strong)
    n = len(U_weak)
    diff = za - zb
    value = float((diff**2).sum() / n)
    ga, _ = backward(layers, ca, 2.0 * diff / n)
    gb, _ = backward(layers, cb, -2.0 * diff / n)
    return value, add(grads_to_params(ga), grads_to_params(gb))


def pseudo_labels(model: ClientModel, U_weak: np.ndarray, threshold: float):
    """Argmax labels and the confidence mask from the weak view (no gradient)."""
    layers = model.encoder_layers() + model.classifier_layers()
    q = softmax(forward(layers, U_weak)[0])
    return q.argmax(axis=1), (q.max(axis=1) >= threshold).astype(np.float64)


def fixmatch_losses(
    model: ClientModel,
    labelled: tuple[np.ndarray, np.ndarray] | None,
    unlabelled: tuple[np.ndarray, np.ndarray] | None,
    cfg: FusionConfig,
    alpha: float = 1.0,
    teacher: ClientModel | None = None,
) -> FixMatchOut:
    """L1 on the weak labelled view, L2 on the strong unlabelled view.

    ``labelled`` is ``(X_weak, y)``; ``unlabelled`` is ``(U_weak, U_strong)``.
    Pseudo-labels come from ``teacher`` (default: ``model`` itself) on the
    weak view and are constants. L2 is normalised by the full unlabelled
    batch size, so a batch with no confident sample gives L2 = 0. The
    returned gradients are for ``L1 + alpha * L2 + consistency_weight * consistency``.
    """
    if labelled is None and unlabelled is None:
        raise ValueError("fixmatch_losses needs a labelled or an unlabelled batch")
    g_enc, g_head = model.encoder.zeros_like(), model.classifier.zeros_like()
    L1 = L2 = cons = 0.0
    rate = 0.0
    if labelled is not None:
        L1, ge, gh = head_loss_and_grads(model, labelled[0], labelled[1], CE)
        g_enc, g_head = add(g_enc, ge), add(g_head, gh)
    if unlabelled is not None:
        U_weak, U_strong = unlabelled
        targets, mask = pseudo_labels(teacher or model, U_weak, cfg.confidence_threshold)
        rate = float(mask.mean())
        if mask.any():
            L2, ge, gh = head_loss_and_grads(model, U_strong, targets, CE, sample_weight=mask)
            g_enc, g_head = add(g_enc, _scaled(ge, alpha)), add(g_head, _scaled(gh, alpha))
        if cfg.consistency_weight > 0:
            cons, gc = consistency_loss(model, U_weak, U_strong)
            g_enc = add(g_enc, _scaled(gc, cfg.consistency_weight))
    return FixMatchOut(L1, L2, rate, cons, g_enc, g_head)


def _view_seeds(rng: np.random.Generator) -> tuple[int, int]:
    s = rng.integers(2**31, size=2)
    return int(s[0]), int(s[1])


# ---------------------------------------------------------------- step 1


def update_client_encoder(
    client: ClientDataset,
    model: ClientModel,
    global_encoder: ParamSet,
    cfg: FusionConfig,
    rng: np.random.Generator,
) -> tuple[ClientModel, float]:
    """Local step-1 training from the broadcast encoder; returns the model and mean loss."""
    model = model.copy()
    model.encoder = global_encoder.copy()
    opt_e, opt_h = SGD(cfg.lr, cfg.momentum), SGD(cfg.lr, cfg.momentum)
    losses = []
    if client.status in (ClientStatus.FULLY_LABELLED, ClientStatus.PARTIALLY_LABELLED):
        X, y = client.X_lab, client.y_lab
        for _ in range(cfg.local_epochs):
            for idx in batches(len(X), cfg.batch_size, rng):
                value, ge, gh = head_loss_and_grads(model, X[idx], y[idx], CE)
                model.encoder = opt_e.step(model.encoder, ge)
                model.classifier = opt_h.step(model.classifier, gh)
                losses.append(value)
    else:
        if client.image is None:
            raise ConfigError("rotation pretext needs image clients")
        U = client.X_unlab
        for _ in range(cfg.local_epochs):
            for idx in batches(len(U), cfg.batch_size, rng):
                Xr, yr = rotation_pretext_batch(U[idx], client.image, cfg.pretext_classes, rng)
                value, ge, gh = head_loss_and_grads(model, Xr, yr, CE, head="pretext")
                w = cfg.pretext_weight
                model.encoder = opt_e.step(model.encoder, _scaled(ge, w))
                model.pretext = opt_h.step(model.pretext, _scaled(gh, w))
                losses.append(w * value)
    return model, float(np.mean(losses))


def fusion_step1_round(
    clients: list[ClientDataset],
    models: list[ClientModel],
    global_encoder: ParamSet,
    cfg: FusionConfig,
    seed: int,
    rnd: int,
    hooks: Hooks | None = None,
) -> tuple[ParamSet, list[ClientModel], list[TraceRecord]]:
    """One round: local updates, then size-weighted averaging of encoders only."""
    hooks = hooks or Hooks()
    encoders, sizes, records, new_models = [], [], [], list(models)
    for k, client in enumerate(clients):
        if client.n == 0:
            records.append(TraceRecord("step1", rnd, k, flags=["no samples: excluded"]))
            continue
        watch = Stopwatch()
        try:
            model, loss = update_client_encoder(
                client, models[k], global_encoder, cfg, rng_for(seed, k, rnd, "batch", 1)
            )
        except Exception as exc:
            raise ClientFailure(rnd, k, exc) from exc
        new_models[k] = model
        hooks.send("step1", rnd, k, "params", "encoder", model.encoder)
        hooks.send("step1", rnd, k, "count", "n", np.int64(client.n))
        hooks.send("step1", rnd, k, "status", "status", np.int64(client.status))
        hooks.params("step1", rnd, k, "encoder", model.encoder)
        encoders.append(model.encoder)
        sizes.append(client.n)
        records.append(TraceRecord("step1", rnd, k, train_loss=loss, n_samples=client.n,
                                   param_norms={"encoder": model.encoder.norm()},
                                   wall_time=watch.elapsed()))
    aggregated = weighted_param_avg(encoders, size_weights(sizes))
    hooks.params("step1", rnd, -1, "global_encoder", aggregated)
    return aggregated, new_models, records


# ---------------------------------------------------------------- step 2


def update_client_step2(
    client: ClientDataset,
    W: ClientModel,
    cfg: FusionConfig,
    rng: np.random.Generator,
) -> tuple[ClientModel, float, float | None, bool]:
    """Status-dependent fine-tuning of the broadcast (encoder, task head).

    Returns (model, mean loss, mean mask rate or None, trained?). Pseudo-labels
    come from the broadcast global model, fixed for the whole local update.
    Fully unlabelled clients only touch the head when the encoder is frozen.
    """
    status = client.status
    use_l2 = cfg.pseudo_label and status != ClientStatus.FULLY_LABELLED
    if status == ClientStatus.FULLY_UNLABELLED and not use_l2:
        return W, 0.0, None, False
    model = W.copy()
    freeze = status == ClientStatus.FULLY_UNLABELLED and cfg.freeze_unlabelled_encoder
    opt_e, opt_h = SGD(cfg.lr, cfg.momentum), SGD(cfg.lr, cfg.momentum)
    alpha = cfg.partial_weight if status == ClientStatus.PARTIALLY_LABELLED else 1.0
    X, y = client.X_lab, client.y_lab
    U = client.X_unlab
    meta = client.image
    losses, rates = [], []
    for _ in range(cfg.local_epochs):
        if status == ClientStatus.FULLY_UNLABELLED:
            plan = [(None, u) for u in batches(len(U), cfg.batch_size, rng)]
        else:
            lab = list(batches(len(X), cfg.batch_size, rng))
            if use_l2 and len(U):
                order = rng.permutation(len(U))
                size = max(1, len(order) // len(lab))
                unl = [order[j * size:(j + 1) * size] for j in range(len(lab))]
                plan = list(zip(lab, unl))
            else:
                plan = [(b, None) for b in lab]
        for lab_idx, unl_idx in plan:
            labelled = unlabelled = None
            if lab_idx is not None:
                labelled = (weak_aug(X[lab_idx], meta, rng), y[lab_idx])
            if unl_idx is not None and len(unl_idx):
                s_weak, s_strong = _view_seeds(rng)
                Ub = U[unl_idx]
                unlabelled = (
                    weak_aug(Ub, meta, s_weak),
                    strong_aug(Ub, meta, s_strong, cfg.strong_dropout, cfg.strong_noise,
                               cfg.tabular_sigma),
                )
            out = fixmatch_losses(model, labelled, unlabelled, cfg, alpha, teacher=W)
            if not freeze:
                model.encoder = opt_e.step(model.encoder, out.g_enc)
            model.classifier = opt_h.step(model.classifier, out.g_head)
            losses.append(out.L1 + alpha * out.L2 + cfg.consistency_weight * out.consistency)
            if unlabelled is not None:
                rates.append(out.mask_rate)
    if freeze:
        model.encoder = W.encoder
    return model, float(np.mean(losses)), (float(np.mean(rates)) if rates else None), True


def fusion_step2_round(
    clients: list[ClientDataset],
    W: ClientModel,
    cfg: FusionConfig,
    seed: int,
    rnd: int,
    hooks: Hooks | None = None,
) -> tuple[ClientModel, list[TraceRecord]]:
    hooks = hooks or Hooks()
    returned, records = [], []
    for k, client in enumerate(clients):
        watch = Stopwatch()
        try:
            model, loss, rate, trained = update_client_step2(
                client, W, cfg, rng_for(seed, k, rnd, "batch", 2)
            )
        except Exception as exc:
            raise ClientFailure(rnd, k, exc) from exc
        rec = TraceRecord("step2", rnd, k, mask_rate=rate, n_samples=client.n,
                          wall_time=watch.elapsed())
        if trained:
            rec.train_loss = loss
            hooks.send("step2", rnd, k, "params", "encoder", model.encoder)
            hooks.send("step2", rnd, k, "params", "classifier", model.classifier)
            hooks.send("step2", rnd, k, "count", "n", np.int64(client.n))
            hooks.send("step2", rnd, k, "status", "status", np.int64(client.status))
            hooks.params("step2", rnd, k, "encoder", model.encoder)
            hooks.params("step2", rnd, k, "classifier", model.classifier)
            returned.append((k, client, model))
        else:
            rec.flags.append("no usable loss: not aggregated")
        records.append(rec)
    if not returned:
        return W, records
    sizes = [c.n for _, c, _ in returned]
    clf = weighted_param_avg([m.classifier for _, _, m in returned], size_weights(sizes))
    enc_members = [
        (c, m) for _, c, m in returned
        if cfg.include_frozen_in_average or not (
            c.status == ClientStatus.FULLY_UNLABELLED and cfg.freeze_unlabelled_encoder)
    ]
    if enc_members:
        enc = weighted_param_avg([m.encoder for _, m in enc_members],
                                 size_weights([c.n for c, _ in enc_members]))
    else:
        enc = W.encoder
    new = ClientModel(W.spec, enc, clf)
    hooks.params("step2", rnd, -1, "global_encoder", enc)
    hooks.params("step2", rnd, -1, "global_classifier", clf)
    return new, records


def initial_global(spec: ModelSpec, seed: int) -> tuple[ParamSet, ParamSet]:
    """Shared starting encoder and the fresh task head used to open step 2."""
    return (init_encoder(spec, rng_for(seed, 0, "global", 1)),
            init_classifier(spec, rng_for(seed, 0, "global", 2)))


def run_fusion(
    clients: list[ClientDataset],
    cfg: FusionConfig,
    seed: int = 0,
    hooks: Hooks | None = None,
    method: str | None = None,
) -> RunResult:
    cfg.validate()
    hooks = hooks or Hooks()
    method = method or ("fedfusion_star" if cfg.pseudo_label else "fedfusion")
    spec = fusion_spec(clients[0], cfg)
    for c in clients[1:]:
        if c.X.shape[1] != spec.input_dim:
            raise ConfigError("all clients need the same input dimension")
    encoder, step2_head = initial_global(spec, seed)
    models = []
    for k, c in enumerate(clients):
        m = build_model(spec, rng_for(seed, k, "head"))
        m.encoder = encoder
        if c.status == ClientStatus.FULLY_UNLABELLED:
            m.pretext = init_pretext(spec, cfg.pretext_classes, rng_for(seed, k, "pretext"))
        models.append(m)
    traces: list[TraceRecord] = []
    for t in range(1, cfg.rounds_step1 + 1):
        encoder, models, recs = fusion_step1_round(clients, models, encoder, cfg, seed, t, hooks)
        # the server's task head is held fixed until step 2
        hooks.params("step1", t, -1, "global_classifier", step2_head)
        traces.extend(_emit(recs, hooks))

    W = ClientModel(spec, encoder, step2_head)
    for t in range(1, cfg.rounds_step2 + 1):
        W, recs = fusion_step2_round(clients, W, cfg, seed, t, hooks)
        for rec in recs:
            rec.val_metric = _client_metric(W, clients[rec.client])
            rec.param_norms = {"encoder": W.encoder.norm(), "classifier": W.classifier.norm()}
        traces.extend(_emit(recs, hooks))
    metrics = [_client_metric(W, c) for c in clients]
    return RunResult(method, [W] * len(clients), traces, metrics,
                     extras={"global": W, "statuses": [int(c.status) for c in clients]})


def _client_metric(W: ClientModel, client: ClientDataset) -> float:
    if client.X_test is not None and len(client.X_test):
        return evaluate(W, client.X_test, client.y_test)
    return evaluate(W, client.X, client.y)


def _emit(records: list[TraceRecord], hooks: Hooks) -> list[TraceRecord]:
    if hooks.on_record:
        for rec in records:
            hooks.on_record(rec)
    return records
