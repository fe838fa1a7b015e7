"""Command-line entry point.

    fedfusion run CONFIG [--seed N ...] [--out DIR] [--dump-params] [--dump-similarity]
    fedfusion compare CONFIG [CONFIG ...] [--out DIR]
    fedfusion cluster CONFIG [--seed N]
    fedfusion validate CONFIG [CONFIG ...]

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from fedfusion.clustering import cluster_clients
from fedfusion.data.csvio import CsvError
from fedfusion.errors import ConfigError
from fedfusion.orchestrator import build_clients, compare, fairness, load_config, run
from fedfusion.protocols.common import DivEnConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fedfusion")


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "seed", None):
        changes["seeds"] = list(dict.fromkeys(args.seed))
    if getattr(args, "dump_params", False):
        changes["dump_params"] = True
    if getattr(args, "dump_similarity", False):
        changes["dump_similarity"] = True
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report = run(cfg, args.out)
    fair = fairness(report)
    print(f"{report.method} [{report.scenario}] {report.metric} mean {report.mean:.3f} "
          f"over seeds {report.seeds}")
    print(f"per-client: {', '.join(f'{v:.2f}' for v in report.client_metrics)}")
    print(f"fairness: min {fair.min:.2f}  max {fair.max:.2f}  std {fair.std:.2f}  "
          f"worst client {fair.worst_client}")
    return EXIT_OK


def cmd_compare(args) -> int:
    configs = [_apply_overrides(load_config(p), args) for p in args.configs]
    table = compare(configs, args.out)
    print(table.to_text())
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = load_config(args.config)
    if cfg.partition.kind != "features":
        raise ConfigError("partition.kind: clustering needs a 'features' partition")
    seed = args.seed[0] if args.seed else cfg.seeds[0]
    clients = build_clients(cfg, seed)
    p = cfg.params if isinstance(cfg.params, DivEnConfig) else DivEnConfig()
    assignment = cluster_clients([c.feature_subset for c in clients], p.min_sim, seed,
                                 p.cluster_max_size)
    print(assignment.to_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    for path in args.configs:
        cfg = load_config(path)
        print(f"{path}: ok ({cfg.method}, {cfg.family} settings, seeds {cfg.seeds})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfusion", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, many=False):
        if many:
            p.add_argument("configs", nargs="+", help="TOML run configs")
        else:
            p.add_argument("config", help="TOML run config")
        p.add_argument("--seed", type=int, action="append",
                       help="override the config's seeds (repeatable)")

    p = sub.add_parser("run", help="execute one config")
    common(p)
    p.add_argument("--out", help="output directory (default: the config's 'out')")
    p.add_argument("--dump-params", action="store_true", help="save exchanged parameters")
    p.add_argument("--dump-similarity", action="store_true", help="save similarity matrices")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="method x scenario table over several configs")
    common(p, many=True)
    p.add_argument("--out", help="root directory for the per-config outputs")
    p.add_argument("--dump-params", action="store_true")
    p.add_argument("--dump-similarity", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cluster", help="print the client clustering for a config")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("validate", help="check configs without running them")
    p.add_argument("configs", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CsvError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
