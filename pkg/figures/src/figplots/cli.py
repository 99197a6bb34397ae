"""Command-line entry points for figure regeneration."""

from __future__ import annotations

import argparse
import sys

from .plots import (plot_multistep_rmse, plot_rmse_vs_gamma,
                    project_representations)
from .tables import render_selection_table


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cfseq-figures")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("rmse-vs-gamma")
    a.add_argument("results_csv")
    a.add_argument("out_image")
    a.add_argument("--tau", type=int, default=1)

    b = sub.add_parser("multistep")
    b.add_argument("results_csv")
    b.add_argument("out_image")

    c = sub.add_parser("selection-table")
    c.add_argument("results_csv")
    c.add_argument("out_path")

    d = sub.add_parser("project")
    d.add_argument("repr_csv")
    d.add_argument("out_image")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--perplexity", type=float, default=30.0)

    args = p.parse_args(argv)
    try:
        if args.command == "rmse-vs-gamma":
            plot_rmse_vs_gamma(args.results_csv, args.out_image, args.tau)
        elif args.command == "multistep":
            plot_multistep_rmse(args.results_csv, args.out_image)
        elif args.command == "selection-table":
            render_selection_table(args.results_csv, args.out_path)
        else:
            project_representations(args.repr_csv, args.out_image,
                                    seed=args.seed,
                                    perplexity=args.perplexity)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
