"""Command line: `fedrec-plot plot --kind <k> --in <csv...> --out <img>`."""

from __future__ import annotations

import argparse
import sys

from .render import PLOT_KINDS, PlotJob, render


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrec-plot")
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="render one figure from simulator CSVs")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="CSV")
    plot.add_argument("--out", required=True, metavar="IMG")
    plot.add_argument("--labels", nargs="*", default=[],
                      help="legend labels, one per input (default: parent dir names)")
    plot.add_argument("--x", dest="x_axis", choices=("round", "time"), default="round",
                      help="convergence x axis")
    plot.add_argument("--clients", type=int, default=0,
                      help="heatmap client-axis width (default: infer)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    job = PlotJob(kind=args.kind, inputs=args.inputs, output=args.out,
                  labels=args.labels, x_axis=args.x_axis, num_clients=args.clients)
    stats = render(job)
    summary = ", ".join(f"{k}={v}" for k, v in stats.items() if k != "kind")
    print(f"wrote {args.out} ({stats['kind']}: {summary})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
