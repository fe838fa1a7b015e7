"""Method x feature-set-size table on the two-group tabular suite.

    python3 scripts/tabular_suite.py --sizes 8 10 12 14 --seeds 0 1 2 3 4
"""

import argparse
import copy
import dataclasses
import json
from pathlib import Path

from fedfusion.orchestrator import compare, fairness, load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--methods", nargs="+", default=["single", "class_agg", "diven", "diven_mix", "diven_c"])
    ap.add_argument("--sizes", nargs="+", type=int, default=[8, 10, 12, 14])
    ap.add_argument("--seeds", nargs="+", type=int, default=None)
    ap.add_argument("--out", default="runs/tabular_suite")
    args = ap.parse_args()

    configs = []
    for size in args.sizes:
        for method in args.methods:
            cfg = load_config(ROOT / "configs" / "tabular" / f"{method}.toml")
            partition = dataclasses.replace(copy.deepcopy(cfg.partition), max_features=size)
            cfg = dataclasses.replace(cfg, partition=partition, scenario=f"{size}-features",
                                      seeds=args.seeds or cfg.seeds)
            configs.append(cfg)
    table = compare(configs, args.out)
    print(table.to_text())
    print()
    for r in table.reports:
        f = fairness(r)
        print(f"{r.method:>10} {r.scenario:>12}  worst client {f.worst_client} "
              f"({f.min:.1f}), std {f.std:.2f}")
    Path(args.out, "table.json").write_text(json.dumps(table.records(), indent=2) + "\n")


if __name__ == "__main__":
    main()
