"""Command-line entry points: run an experiment from a config file, evaluate
a saved checkpoint, or produce a selection-bias CSV from a rounds log."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import harness, metrics


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrec")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--selector", choices=harness.SELECTORS)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--clients", type=int, help="clients selected per round")
    run.add_argument("--seed", type=int)
    run.add_argument("--ablation", choices=harness.ABLATIONS)
    run.add_argument("--output-dir", help="override the config output_dir")
    run.add_argument("--verbose", action="store_true")

    ev = sub.add_parser("evaluate", help="evaluate test metrics from a checkpoint")
    ev.add_argument("--checkpoint", required=True)

    bias = sub.add_parser("bias-report", help="selection-frequency report from rounds.csv")
    bias.add_argument("--logs", required=True)
    bias.add_argument("--out", help="write selector,client_id,count CSV here")
    bias.add_argument("--clients", type=int, default=0,
                      help="total client count (default: max selected id + 1)")
    bias.add_argument("--selector", default="unknown", help="label used in the CSV")
    return parser


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    overrides = {}
    for name in ("selector", "lam", "seed", "ablation"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.clients is not None:
        overrides["clients_per_round"] = args.clients
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if overrides:
        cfg = replace(cfg, **overrides)
    harness.validate_config(cfg)
    result = harness.run_experiment(cfg, quiet=not args.verbose)
    print(f"rounds_run: {result.rounds_run}")
    print(f"best_round: {result.best_round}")
    print(f"best_val_hr: {result.best_val_hr:.6f}")
    print(f"test_hr@{cfg.eval_k}: {result.test_hr:.6f}")
    print(f"test_ndcg@{cfg.eval_k}: {result.test_ndcg:.6f}")
    if result.output_dir:
        print(f"output: {result.output_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    world = harness.load_world_checkpoint(args.checkpoint)
    report = metrics.evaluate_split(
        world.global_model, world.clients, world.split, "test", world.cfg.eval_k)
    print(f"round: {world.global_model.round_index}")
    print(f"test_hr@{report.k}: {report.hr:.6f}")
    print(f"test_ndcg@{report.k}: {report.ndcg:.6f}")
    print(f"evaluated_users: {len(report.per_user_hr)}")
    return 0


def _parse_selected_column(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            sel_idx = header.index("selected")
            round_idx = header.index("round")
        except ValueError:
            raise SystemExit(f"{path}: missing 'round'/'selected' columns")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids = [int(c) for c in parts[sel_idx].split(";") if c]
            rows.append((int(parts[round_idx]), ids))
    return rows


def _cmd_bias_report(args) -> int:
    rows = _parse_selected_column(args.logs)
    if not rows:
        raise SystemExit(f"{args.logs}: no rounds logged")
    selected = [ids for _, ids in rows]
    n = args.clients or (max(max(ids) for ids in selected if ids) + 1)
    fake_logs = [harness.RoundLog(r, ids, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
                 for r, ids in rows]
    unique, freq = harness.selection_bias_report(fake_logs, n)
    print(f"rounds: {len(rows)}")
    print(f"unique_clients: {unique}")
    print(f"total_selections: {int(freq.sum())}")
    if args.out:
        harness.write_bias_csv(fake_logs, n, args.selector, args.out)
        print(f"wrote: {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "evaluate":
        return _cmd_evaluate(args)
    return _cmd_bias_report(args)


if __name__ == "__main__":
    sys.exit(main())
