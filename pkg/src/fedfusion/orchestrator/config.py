"""Run configuration: one TOML file per (method, scenario).

Layout::

    scenario = "8-features"
    method = "diven_c"
    seeds = [0, 1, 2]
    out = "runs/tabular"

    [dataset]            # kind = synth_tabular | synth_digits | csv
    [dataset.params]     # keyword arguments of the generator
    [partition]          # kind = features | domains | rows
    [method_params]      # DivEnConfig or FusionConfig fields
    [run]                # record_timing, dump_params, dump_similarity

Every validation error names the offending key.
"""

from __future__ import annotations

import dataclasses
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from fedfusion.data.synth import DOMAIN_TRANSFORMS, synth_digits, synth_tabular
from fedfusion.errors import ConfigError
from fedfusion.protocols.common import DivEnConfig, FusionConfig

METHODS = (
    "single", "class_agg", "fedavg", "diven", "diven_mix", "diven_c",
    "fedfusion", "fedfusion_star",
)
DIVEN_METHODS = ("single", "class_agg", "diven", "diven_mix", "diven_c")
FUSION_METHODS = ("fedfusion", "fedfusion_star")
DATASET_KINDS = ("synth_tabular", "synth_digits", "csv")
PARTITION_KINDS = ("features", "domains", "rows")

GENERATORS = {"synth_tabular": synth_tabular, "synth_digits": synth_digits}


@dataclass
class DatasetSpec:
    kind: str = "synth_tabular"
    params: dict = field(default_factory=dict)
    path: str | None = None  # csv only
    schema: dict | str | None = None  # csv only: inline table or a .json/.toml path
    test_fraction: float = 0.0  # csv only; generators take their own
    scale: bool = True  # min-max scale tabular features (train rows only)


@dataclass
class PartitionSpec:
    kind: str = "features"
    n_clients: int = 1
    max_features: int | None = None  # features: columns per client (default all)
    core_size: int = 2
    n_groups: int | None = None
    statuses: list | None = None  # per-client labelled fraction or {status, fraction}


@dataclass
class RunConfig:
    method: str
    params: DivEnConfig | FusionConfig
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "runs"
    scenario: str = "default"
    record_timing: bool = True
    dump_params: bool = False
    dump_similarity: bool = False
    source: str | None = None

    @property
    def family(self) -> str:
        return "fusion" if isinstance(self.params, FusionConfig) else "diven"

    def data_key(self) -> str:
        """Canonical text of everything that fixes the data a method sees."""
        payload = {
            "dataset": dataclasses.asdict(self.dataset),
            "partition": dataclasses.asdict(self.partition),
        }
        return json.dumps(payload, sort_keys=True, default=str)

    def to_dict(self) -> dict:
        params = dataclasses.asdict(self.params)
        if params.get("batch_size") is None:
            params["batch_size"] = "full"
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seeds": list(self.seeds),
            "out": self.out,
            "dataset": _drop_none(dataclasses.asdict(self.dataset)),
            "partition": _drop_none(dataclasses.asdict(self.partition)),
            "method_params": params,
            "run": {
                "record_timing": self.record_timing,
                "dump_params": self.dump_params,
                "dump_similarity": self.dump_similarity,
            },
        }


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


# ------------------------------------------------------------------ parsing


def _check_keys(table: dict, allowed, where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{where}{key}: unknown key")


def _typed(value, default, key: str, annotation: str):
    """Coerce a TOML value to the type of a dataclass default."""
    if "tuple[tuple" in annotation:
        if not isinstance(value, list) or not all(isinstance(v, list) for v in value):
            raise ConfigError(f"{key}: expected a list of integer lists")
        try:
            return tuple(tuple(int(w) for w in v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of integer lists") from None
    if "tuple[int" in annotation:
        if not isinstance(value, list) or not all(isinstance(w, int) for w in value):
            raise ConfigError(f"{key}: expected a list of integers")
        return tuple(value)
    if annotation == "dict" and not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a table")
    if "None" in annotation and value == "full":
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false")
        return value
    if isinstance(default, int) or "int" in annotation:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string")
    return value


def _build(cls, table: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(table, fields, where)
    kwargs = {}
    for name, value in table.items():
        f = fields[name]
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[name] = _typed(value, default, where + name, str(f.type))
    return cls(**kwargs)


def params_family(method: str, partition_kind: str, family: str | None) -> str:
    if method in DIVEN_METHODS:
        return "diven"
    if method in FUSION_METHODS:
        return "fusion"
    # fedavg serves both suites: full-model averaging on shared features, or
    # the supervised step-2-only baseline of the two-step pipeline
    if family is not None:
        if family not in ("diven", "fusion"):
            raise ConfigError("method.family: must be 'diven' or 'fusion'")
        return family
    return "fusion" if partition_kind == "domains" else "diven"


def parse_config(data: dict, source: str | None = None) -> RunConfig:
    _check_keys(data, ("scenario", "method", "seeds", "out", "dataset", "partition",
                       "method_params", "method", "run"), "")
    method_section = data.get("method")
    family = None
    params_table: dict = {}
    if isinstance(method_section, dict):
        _check_keys(method_section, ("name", "family", "params"), "method.")
        if "method_params" in data:
            raise ConfigError("method_params: use method.params when method is a table")
        name = method_section.get("name")
        family = method_section.get("family")
        params_table = method_section.get("params", {})
    else:
        name = method_section
        params_table = data.get("method_params", {})
    if name is None:
        raise ConfigError("method: missing")
    if name not in METHODS:
        raise ConfigError(f"method: unknown method {name!r}; expected one of {', '.join(METHODS)}")

    dataset = _build(DatasetSpec, data.get("dataset", {}), "dataset.")
    if dataset.kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind: unknown kind {dataset.kind!r}")
    _validate_dataset(dataset)
    partition = _build(PartitionSpec, data.get("partition", {}), "partition.")
    _validate_partition(partition, dataset)

    fam = params_family(name, partition.kind, family)
    where = "method.params." if isinstance(method_section, dict) else "method_params."
    if fam == "diven":
        table = dict(params_table)
        if "variant" in table:
            raise ConfigError(f"{where}variant: set by the method name, do not give it")
        params = _build(DivEnConfig, table, where)
        if name in ("diven", "diven_mix", "diven_c"):
            params = dataclasses.replace(params, variant=name)
    else:
        table = dict(params_table)
        if "pseudo_label" in table:
            raise ConfigError(f"{where}pseudo_label: set by the method name, do not give it")
        params = _build(FusionConfig, table, where)
        params = dataclasses.replace(params, pseudo_label=(name == "fedfusion_star"))
    try:
        params.validate()
    except ConfigError as exc:
        raise ConfigError(f"{where.rstrip('.')}: {exc}") from None

    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError("seeds: expected a nonempty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate entries")

    run = data.get("run", {})
    _check_keys(run, ("record_timing", "dump_params", "dump_similarity"), "run.")
    for key in run:
        if not isinstance(run[key], bool):
            raise ConfigError(f"run.{key}: expected true or false")
    out = data.get("out", "runs")
    scenario = data.get("scenario", "default")
    if not isinstance(out, str):
        raise ConfigError("out: expected a string")
    if not isinstance(scenario, str):
        raise ConfigError("scenario: expected a string")
    if fam == "fusion" and partition.kind == "features" and name != "fedavg":
        raise ConfigError("partition.kind: the two-step pipeline needs one shared input space")
    if name == "diven_c" and partition.kind != "features":
        raise ConfigError("partition.kind: diven_c clusters feature subsets, use 'features'")
    return RunConfig(
        method=name, params=params, dataset=dataset, partition=partition, seeds=list(seeds),
        out=out, scenario=scenario, record_timing=run.get("record_timing", True),
        dump_params=run.get("dump_params", False),
        dump_similarity=run.get("dump_similarity", False), source=source,
    )


def _validate_dataset(ds: DatasetSpec) -> None:
    if ds.kind == "csv":
        if not ds.path:
            raise ConfigError("dataset.path: required for csv datasets")
        if ds.schema is None:
            raise ConfigError("dataset.schema: required for csv datasets")
        if ds.params:
            raise ConfigError("dataset.params: csv datasets take no generator params")
        if not 0 <= ds.test_fraction < 1:
            raise ConfigError("dataset.test_fraction: must be in [0, 1)")
        return
    gen = GENERATORS[ds.kind]
    sig = inspect.signature(gen)
    for key, value in ds.params.items():
        if key not in sig.parameters or key == "seed":
            raise ConfigError(f"dataset.params.{key}: unknown generator parameter")
        default = sig.parameters[key].default
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"dataset.params.{key}: expected a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"dataset.params.{key}: expected an integer")
            if value < 0:
                raise ConfigError(f"dataset.params.{key}: must be >= 0")
    tf = ds.params.get("test_fraction", 0.0)
    if not 0 <= tf < 1:
        raise ConfigError("dataset.params.test_fraction: must be in [0, 1)")
    if ds.kind == "synth_digits":
        for t in ds.params.get("transforms", []) or []:
            if t not in DOMAIN_TRANSFORMS:
                raise ConfigError(f"dataset.params.transforms: unknown transform {t!r}")


def _validate_partition(p: PartitionSpec, ds: DatasetSpec) -> None:
    if p.kind not in PARTITION_KINDS:
        raise ConfigError(f"partition.kind: unknown kind {p.kind!r}")
    if p.n_clients < 1:
        raise ConfigError("partition.n_clients: must be >= 1")
    if (ds.kind == "synth_digits") != (p.kind == "domains"):
        raise ConfigError("partition.kind: 'domains' goes with (and only with) synth_digits")
    if p.max_features is not None and p.max_features < 1:
        raise ConfigError("partition.max_features: must be >= 1")
    if p.core_size < 1:
        raise ConfigError("partition.core_size: must be >= 1")
    if p.n_groups is not None and not 1 <= p.n_groups <= p.n_clients:
        raise ConfigError("partition.n_groups: must be in [1, n_clients]")
    if p.statuses is not None and not isinstance(p.statuses, list):
        raise ConfigError("partition.statuses: expected a list")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    cfg = parse_config(data, str(path))
    if cfg.dataset.kind == "csv":
        base = path.parent
        if not Path(cfg.dataset.path).is_absolute():
            cfg.dataset.path = str(base / cfg.dataset.path)
        if isinstance(cfg.dataset.schema, str) and not Path(cfg.dataset.schema).is_absolute():
            cfg.dataset.schema = str(base / cfg.dataset.schema)
    return cfg


# ------------------------------------------------------------ reference doc

FIELD_DOCS = {
    "DivEnConfig": {
        "rounds": "R; communication rounds 1..R-1 are run",
        "epochs_init": "local epochs in round 1",
        "epochs_low": "local epochs in later rounds and in guard retraining",
        "pull_lambda": "weight of the L2 pull toward the similarity-weighted classifier",
        "similarity_temperature": "softmax temperature over cosine similarities (> 0)",
        "variant": "set from the method name",
        "guard_enabled": "run the negative-transfer guard after the last round",
        "lr": "SGD step size",
        "momentum": "SGD momentum (0 disables)",
        "batch_size": 'minibatch size, or "full" for full-batch descent',
        "encoder_menu": "candidate encoder widths; every entry ends in the latent dim",
        "search_budget": "menu entries tried per client by the encoder search",
        "search_epochs": "training epochs per search candidate",
        "val_fraction": "share of labelled rows held out for validation",
        "participation_fraction": "share of clients training each round",
        "min_sim": "Jaccard threshold for a cluster to stay merged (diven_c)",
        "cluster_max_size": "clusters larger than this are re-clustered (diven_c)",
    },
    "FusionConfig": {
        "rounds_step1": "T1; encoder pretraining rounds",
        "rounds_step2": "T2; fine-tuning rounds",
        "local_epochs": "local epochs per round in both steps",
        "pretext_classes": "rotation classes for the pretext head (2 or 4)",
        "pretext_weight": "scale of the pretext loss",
        "confidence_threshold": "pseudo-label confidence cut in (0, 1)",
        "partial_weight": "weight of the unlabelled loss on partially labelled clients",
        "consistency_weight": "optional weak/strong latent consistency term (0 disables)",
        "pseudo_label": "set from the method name (fedfusion_star enables it)",
        "freeze_unlabelled_encoder": "fully unlabelled clients update only the head in step 2",
        "include_frozen_in_average": "frozen encoders still enter the step-2 encoder average",
        "lr": "SGD step size",
        "momentum": "SGD momentum (0 disables)",
        "batch_size": 'minibatch size, or "full"',
        "encoder_layers": "hidden widths of the shared encoder",
        "strong_dropout": "pixel dropout rate of the strong view",
        "strong_noise": "pixel noise scale of the strong view",
        "tabular_sigma": "feature noise of the strong view on tabular data",
    },
    "DatasetSpec": {
        "kind": "synth_tabular, synth_digits or csv",
        "params": "generator keyword arguments (the run seed is passed separately)",
        "path": "csv file, relative to the config file",
        "schema": "inline table or a .json/.toml file with target, task and columns",
        "test_fraction": "stratified test share for csv data",
        "scale": "min-max scale features with training-row statistics",
    },
    "PartitionSpec": {
        "kind": "features (subset per client), domains (client per domain) or rows",
        "n_clients": "number of simulated clients",
        "max_features": "columns per client for the features partition",
        "core_size": "columns every client shares",
        "n_groups": "draw this many subsets and cycle clients through them",
        "statuses": "per-client labelled fraction, or tables with status and fraction",
    },
}


def _fmt_default(f) -> str:
    if f.default is not dataclasses.MISSING:
        value = f.default
    elif f.default_factory is not dataclasses.MISSING:
        value = f.default_factory()
    else:
        return "(required)"
    if value is None:
        return "unset"
    if isinstance(value, tuple):
        value = json.dumps(value)
    return f"`{value}`"


def reference_markdown() -> str:
    """Markdown page listing every config key with its default."""
    lines = [
        "# Run configuration reference",
        "",
        "Generated by `scripts/gen_config_reference.py`; do not edit by hand.",
        "",
        "## Top level",
        "",
        "| key | default | meaning |",
        "|---|---|---|",
        '| `scenario` | `"default"` | column label used by `compare` |',
        f"| `method` | (required) | one of {', '.join(f'`{m}`' for m in METHODS)} |",
        "| `seeds` | `[0]` | one run and one trace file per seed |",
        '| `out` | `"runs"` | output directory |',
        "",
        "Method settings go in `[method_params]`. `method` may instead be a table",
        "with `name`, `params` and (for `fedavg`) `family`",
        "= `diven` or `fusion`. Without `family`, `fedavg` uses the fusion settings",
        "for domain partitions and the DivEn settings otherwise.",
        "",
        "## `[run]`",
        "",
        "| key | default | meaning |",
        "|---|---|---|",
        "| `record_timing` | `true` | write wall-clock seconds into traces (0.0 when off) |",
        "| `dump_params` | `false` | save every exchanged parameter block per seed (npz) |",
        "| `dump_similarity` | `false` | save similarity matrices per round (JSONL) |",
        "",
    ]
    sections = [
        ("`[dataset]`", DatasetSpec), ("`[partition]`", PartitionSpec),
        ("`[method_params]` for single, class_agg, fedavg, diven, diven_mix, diven_c",
         DivEnConfig),
        ("`[method_params]` for fedfusion, fedfusion_star (and fedavg on domains)",
         FusionConfig),
    ]
    for title, cls in sections:
        docs = FIELD_DOCS[cls.__name__]
        lines += [f"## {title}", "", "| key | default | meaning |", "|---|---|---|"]
        for f in dataclasses.fields(cls):
            lines.append(f"| `{f.name}` | {_fmt_default(f)} | {docs.get(f.name, '')} |")
        lines.append("")
    lines += [
        "## Generator parameters",
        "",
        "`dataset.params` accepts the keyword arguments of the generator named by",
        "`dataset.kind`, except `seed`:",
        "",
    ]
    for kind, gen in GENERATORS.items():
        sig = inspect.signature(gen)
        args = ", ".join(
            f"`{n}={p.default!r}`" for n, p in sig.parameters.items() if n != "seed"
        )
        lines.append(f"- `{kind}`: {args}")
    lines.append("")
    return "\n".join(lines)
