#!/usr/bin/env python3
"""Paired comparison of client selectors over several seeds.

For each seed, runs every selector on the identical dataset/split/init and
reports final test metrics plus selection-bias statistics. Writes one run
directory per (selector, seed) with rounds.csv / summary.csv, and a
combined comparison.csv at the top level.
"""

import argparse
import os
from dataclasses import replace

from fedrec import data, harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", required=True, help="base experiment config")
    ap.add_argument("--selectors", nargs="+",
                    default=["random", "powd", "proxyrl"], choices=harness.SELECTORS)
    ap.add_argument("--seeds", type=int, nargs="+", default=[101, 102, 103, 104, 105])
    ap.add_argument("--outdir", required=True)
    args = ap.parse_args()

    base = harness.load_config(args.config)
    os.makedirs(args.outdir, exist_ok=True)
    rows = ["selector,seed,rounds_run,best_round,best_val_hr,test_hr,test_ndcg,unique_clients"]
    for seed in args.seeds:
        cfg_seed = replace(base, seed=seed)
        split = harness.load_dataset(cfg_seed)
        for selector in args.selectors:
            out = os.path.join(args.outdir, f"{selector}_seed{seed}")
            cfg = replace(cfg_seed, selector=selector, output_dir=out)
            result = harness.run_experiment(cfg, split)
            unique, _ = harness.selection_bias_report(result.logs, split.num_users)
            harness.write_bias_csv(result.logs, split.num_users, selector,
                                   os.path.join(out, "bias.csv"))
            row = (f"{selector},{seed},{result.rounds_run},{result.best_round},"
                   f"{result.best_val_hr!r},{result.test_hr!r},{result.test_ndcg!r},{unique}")
            rows.append(row)
            print(row, flush=True)
    path = os.path.join(args.outdir, "comparison.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
