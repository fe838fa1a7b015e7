"""Reports, fairness statistics and method-by-scenario comparison tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from fedfusion.errors import ConfigError


@dataclass
class Report:
    method: str
    scenario: str
    metric: str  # "accuracy" (percent) or "mae"
    seeds: list[int]
    per_seed: list[list[float]]  # final per-client test metric, one row per seed
    client_metrics: list[float]  # per-client mean over seeds
    mean: float  # arithmetic mean of client_metrics
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_seeds(cls, method, scenario, metric, seeds, per_seed, config=None, extras=None):
        n = {len(row) for row in per_seed}
        if len(n) != 1:
            raise ValueError("every seed must report the same number of clients")
        clients = [float(v) for v in np.mean(np.array(per_seed, dtype=np.float64), axis=0)]
        return cls(method, scenario, metric, list(seeds), [list(r) for r in per_seed],
                   clients, float(np.mean(clients)), config or {}, extras or {})

    @property
    def higher_is_better(self) -> bool:
        return self.metric == "accuracy"

    def payload(self) -> dict:
        d = asdict(self)
        d["fairness"] = asdict(fairness(self))
        return d

    def save(self, path, timing: dict | None = None) -> None:
        d = self.payload()
        if timing is not None:
            d["timing"] = timing
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Report:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d.pop("fairness", None)
        d.pop("timing", None)
        return cls(**d)


@dataclass
class Fairness:
    min: float
    max: float
    mean: float
    std: float  # population standard deviation across clients
    worst_client: int


def fairness(report: Report | list[float], higher_is_better: bool = True) -> Fairness:
    """Spread of the per-client metric; the worst client is the lowest accuracy
    (or the highest error)."""
    if isinstance(report, Report):
        values, higher_is_better = report.client_metrics, report.higher_is_better
    else:
        values = report
    v = np.asarray(values, dtype=np.float64)
    worst = int(np.argmin(v)) if higher_is_better else int(np.argmax(v))
    return Fairness(float(v.min()), float(v.max()), float(v.mean()), float(v.std()), worst)


@dataclass
class Comparison:
    methods: list[str]
    scenarios: list[str]
    cells: dict[tuple[str, str], float]
    reports: list[Report]

    def records(self) -> list[dict]:
        return [
            {"method": m, "scenario": s, "mean": self.cells[(m, s)]}
            for m in self.methods for s in self.scenarios
        ]

    def to_text(self, digits: int = 2) -> str:
        head = ["method", *self.scenarios]
        rows = [[m, *(f"{self.cells[(m, s)]:.{digits}f}" for s in self.scenarios)]
                for m in self.methods]
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]

        def fmt(row):
            first = row[0].ljust(widths[0])
            return "  ".join([first, *(c.rjust(w) for c, w in zip(row[1:], widths[1:]))])

        rule = "  ".join("-" * w for w in widths)
        return "\n".join([fmt(head), rule, *(fmt(r) for r in rows)])


def _check_consistent(configs) -> None:
    """Configs sharing a scenario must share data and partition; all share seeds."""
    seeds = {tuple(c.seeds) for c in configs}
    if len(seeds) > 1:
        raise ConfigError(f"seeds: configs disagree ({sorted(seeds)})")
    by_scenario: dict[str, str] = {}
    for c in configs:
        key = c.data_key()
        if by_scenario.setdefault(c.scenario, key) != key:
            raise ConfigError(
                f"scenario {c.scenario!r}: configs disagree on dataset or partition"
            )


def compare_reports(reports: list[Report]) -> Comparison:
    methods = list(dict.fromkeys(r.method for r in reports))
    scenarios = list(dict.fromkeys(r.scenario for r in reports))
    cells: dict[tuple[str, str], float] = {}
    for r in reports:
        key = (r.method, r.scenario)
        if key in cells and cells[key] != r.mean:
            raise ConfigError(f"method {r.method!r}, scenario {r.scenario!r}: conflicting results")
        cells[key] = r.mean
    missing = [(m, s) for m in methods for s in scenarios if (m, s) not in cells]
    if missing:
        m, s = missing[0]
        raise ConfigError(f"scenario {s!r}: no result for method {m!r}")
    return Comparison(methods, scenarios, cells, reports)


def compare(configs, out_root=None) -> Comparison:
    """Run every config (once per distinct config) and tabulate the means."""
    from fedfusion.orchestrator.runner import run

    _check_consistent(configs)
    done: dict[str, Report] = {}
    reports = []
    for c in configs:
        key = json.dumps(c.to_dict(), sort_keys=True, default=str)
        if key not in done:
            out = Path(out_root or c.out) / c.scenario / c.method
            done[key] = run(c, out)
        reports.append(done[key])
    return compare_reports(reports)
