"""Domain-adaptation comparison on synthetic digits.

Reports the accuracy of every client, and of the label-free client in
particular, for supervised FedAvg, the two-step pipeline and its
pseudo-labelling variant.

    python3 scripts/digits_suite.py --seeds 0 1 2 3 4
"""

import argparse
import dataclasses

from pathlib import Path

import numpy as np

from fedfusion.orchestrator import compare, load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", nargs="+", type=int, default=None)
    ap.add_argument("--out", default="runs/digits_suite")
    args = ap.parse_args()

    configs = []
    for method in ("fedavg", "fedfusion", "fedfusion_star"):
        cfg = load_config(ROOT / "configs" / "digits" / f"{method}.toml")
        configs.append(dataclasses.replace(cfg, seeds=args.seeds or cfg.seeds))
    table = compare(configs, args.out)
    print(table.to_text())
    print()
    for r in table.reports:
        statuses = r.extras.get("statuses", [])
        target = [i for i, s in enumerate(statuses) if s == 3]
        per_seed = np.array(r.per_seed)
        for t in target:
            print(f"{r.method:>15}  unlabelled client {t}: {per_seed[:, t].mean():6.2f} "
                  f"(seeds: {', '.join(f'{v:.1f}' for v in per_seed[:, t])})")


if __name__ == "__main__":
    main()
