"""Seeded execution of one RunConfig: data, partition, method, traces, report."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from fedfusion.clustering import cluster_clients
from fedfusion.data.csvio import load_csv, scale_dataset
from fedfusion.data.dataset import ClientDataset
from fedfusion.data.partition import assign_statuses, domain_clients, partition_features
from fedfusion.errors import ConfigError
from fedfusion.model import higher_is_better
from fedfusion.nncore import ParamSet
from fedfusion.orchestrator.config import GENERATORS, RunConfig
from fedfusion.orchestrator.report import Report, fairness
from fedfusion.protocols.baselines import run_baseline
from fedfusion.protocols.common import FusionConfig, Hooks, RunResult, TraceRecord
from fedfusion.protocols.diven import run_diven, run_diven_c
from fedfusion.protocols.fusion import run_fusion
from fedfusion.simagg import SimilarityWeights

log = logging.getLogger(__name__)


def trace_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"trace_seed{seed}.jsonl"


# ------------------------------------------------------------------ data


def build_clients(cfg: RunConfig, seed: int) -> list[ClientDataset]:
    """Generate or load the data for one seed and split it across clients."""
    ds_spec, part = cfg.dataset, cfg.partition
    if ds_spec.kind == "synth_digits":
        domains = GENERATORS["synth_digits"](seed=seed, **ds_spec.params)
        clients = domain_clients(domains)
        if part.n_clients != len(clients):
            raise ConfigError(
                f"partition.n_clients: {part.n_clients} given but the generator made "
                f"{len(clients)} domains"
            )
    else:
        if ds_spec.kind == "csv":
            ds = load_csv(ds_spec.path, ds_spec.schema, ds_spec.test_fraction, seed)
        else:
            ds = GENERATORS["synth_tabular"](seed=seed, **ds_spec.params)
            if ds_spec.scale:
                ds = scale_dataset(ds)
        n_feat = ds.n_features
        if part.kind == "rows":
            clients = partition_features(ds, part.n_clients, n_feat, seed,
                                         core_size=min(part.core_size, n_feat))
        else:
            max_features = part.max_features or n_feat
            if max_features > n_feat:
                raise ConfigError(
                    f"partition.max_features: {max_features} exceeds the {n_feat} columns"
                )
            clients = partition_features(ds, part.n_clients, max_features, seed,
                                         part.core_size, part.n_groups)
    if part.statuses is not None:
        clients = assign_statuses(clients, part.statuses, seed)
    return clients


# ---------------------------------------------------------------- execute


def execute(cfg: RunConfig, seed: int, clients: list[ClientDataset] | None = None,
            hooks: Hooks | None = None) -> RunResult:
    """Run the configured method once; no files are touched."""
    clients = build_clients(cfg, seed) if clients is None else clients
    hooks = hooks or Hooks()
    p = cfg.params
    if cfg.method in ("fedfusion", "fedfusion_star"):
        return run_fusion(clients, p, seed, hooks, cfg.method)
    if cfg.method in ("single", "class_agg", "fedavg"):
        return run_baseline(clients, cfg.method, p, seed, hooks)
    if cfg.method == "diven_c":
        subsets = [c.feature_subset for c in clients]
        assignment = cluster_clients(subsets, p.min_sim, seed, p.cluster_max_size)
        return run_diven_c(clients, p, assignment, seed, hooks)
    return run_diven(clients, p, seed, hooks)


class TraceWriter:
    """Single append-only writer; every record is flushed as it arrives so a
    failing run leaves its partial trace behind."""

    def __init__(self, path: Path, record_timing: bool):
        self.path = path
        self.record_timing = record_timing
        self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, rec: TraceRecord) -> None:
        d = rec.to_dict()
        if not self.record_timing:
            d["wall_time"] = 0.0
        self.fh.write(json.dumps(d) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


class ParamDump:
    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}

    def __call__(self, phase: str, rnd: int, client: int, name: str, params: ParamSet) -> None:
        for key, value in params.items():
            self.arrays[f"{phase}/r{rnd}/c{client}/{name}/{key}"] = np.array(value)

    def save(self, path: Path) -> None:
        np.savez(path, **self.arrays)


class SimilarityDump:
    def __init__(self, path: Path):
        self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, phase: str, rnd: int, w: SimilarityWeights) -> None:
        self.fh.write(json.dumps({
            "phase": phase, "round": rnd, "temperature": w.temperature,
            "s": w.s.tolist(), "alpha": w.alpha.tolist(), "degenerate": list(w.degenerate),
        }) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _final_round(result: RunResult) -> int:
    rounds = [r.round for r in result.traces]
    return max(rounds) if rounds else 0


def run_seed(cfg: RunConfig, seed: int, out_dir: Path) -> RunResult:
    """One seed: executes the method and streams its trace to ``out_dir``."""
    writer = TraceWriter(trace_path(out_dir, seed), cfg.record_timing)
    params = ParamDump() if cfg.dump_params else None
    sims = SimilarityDump(out_dir / f"similarity_seed{seed}.jsonl") if cfg.dump_similarity else None
    hooks = Hooks(dump_params=params, dump_similarity=sims, on_record=writer)
    try:
        result = execute(cfg, seed, hooks=hooks)
        last = _final_round(result)
        for cid, metric in enumerate(result.client_metrics):
            writer(TraceRecord("final", last, cid, test_metric=float(metric)))
    finally:
        writer.close()
        if sims is not None:
            sims.close()
        if params is not None:
            params.save(out_dir / f"params_seed{seed}.npz")
    return result


def run(cfg: RunConfig, out_dir=None) -> Report:
    """Execute every seed, write one trace per seed and ``report.json``."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    per_seed, metric_name, extras = [], None, {}
    for seed in cfg.seeds:
        log.info("%s [%s] seed %d", cfg.method, cfg.scenario, seed)
        result = run_seed(cfg, seed, out)
        per_seed.append([float(m) for m in result.client_metrics])
        if metric_name is None:
            task = "classification"
            if cfg.family == "diven" and result.models:
                task = result.models[0].spec.task
            metric_name = "accuracy" if higher_is_better(task) else "mae"
        if isinstance(cfg.params, FusionConfig) and "statuses" in result.extras:
            extras["statuses"] = result.extras["statuses"]
        if "assignment" in result.extras:
            extras.setdefault("assignments", []).append(result.extras["assignment"].to_dict())
    report = Report.from_seeds(cfg.method, cfg.scenario, metric_name, list(cfg.seeds),
                               per_seed, config=cfg.to_dict(), extras=extras)
    timing = {"wall_time_total": time.perf_counter() - t0} if cfg.record_timing else None
    report.save(out / "report.json", timing=timing)
    log.info("%s [%s] mean %.3f, worst client %d", cfg.method, cfg.scenario, report.mean,
             fairness(report).worst_client)
    return report
