"""Command line front end: delayloop-plot --panels fb.csv:nofb.csv ... --out fig.svg"""

import argparse
import sys

from .render import PanelSpec, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delayloop-plot",
        description="Render stacked feedback/no-feedback panels from "
                    "simulator CSV files")
    parser.add_argument("--panels", nargs="+", required=True,
                        metavar="FEEDBACK.csv:NOFEEDBACK.csv",
                        help="one colon-separated CSV pair per panel")
    parser.add_argument("--out", required=True, help="output figure path (svg/pdf)")
    parser.add_argument("--titles", default="",
                        help="comma-separated panel titles")
    parser.add_argument("--tau", default="",
                        help="comma-separated delay markers, one per panel")
    parser.add_argument("--column", default="",
                        help="observable column to plot (default: first of schema)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    titles = [t.strip() for t in args.titles.split(",")] if args.titles else []
    taus = [float(v) for v in args.tau.split(",")] if args.tau else []
    panels = []
    for i, pair in enumerate(args.panels):
        if ":" not in pair:
            print(f"error: panel {pair!r} is not a FEEDBACK:NOFEEDBACK pair",
                  file=sys.stderr)
            return 2
        fb, nf = pair.split(":", 1)
        panels.append(PanelSpec(
            feedback_csv=fb, no_feedback_csv=nf, y_column=args.column,
            title=titles[i] if i < len(titles) else "",
            tau_marker=taus[i] if i < len(taus) else 0.0))
    if not panels:
        print("error: empty panel list", file=sys.stderr)
        return 2
    try:
        render(panels, args.out)
    except (SchemaError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
