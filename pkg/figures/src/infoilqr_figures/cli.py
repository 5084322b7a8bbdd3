"""The ``plot`` command: render figures from experiment CSV outputs.

    plot convergence --csv results/compare_pendulum.csv --out fig.png
    plot convergence --csv a.csv --csv b.csv --label nominal --label noisy --out fig.png
    plot trajectory --csv results/.../trajectory.csv --out traj.png
"""

from __future__ import annotations

import argparse
import sys

from .io import CurveSpec, SchemaError
from .plots import plot_convergence, plot_trajectory


def _parse_zoom(raw: str) -> tuple:
    try:
        lo, _, hi = raw.partition(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'LO:HI', got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="cost-vs-iteration comparison")
    conv.add_argument("--csv", action="append", required=True, help="curve source (repeatable)")
    conv.add_argument("--label", action="append", default=None, help="label per --csv")
    conv.add_argument("--out", required=True, help="output image path")
    conv.add_argument("--log", action="store_true", help="logarithmic cost axis")
    conv.add_argument("--zoom", type=_parse_zoom, default=None, help="inset window LO:HI")
    conv.add_argument("--no-band", action="store_true", help="suppress ensemble bands")

    traj = sub.add_parser("trajectory", help="state/control/measurement time series")
    traj.add_argument("--csv", required=True, help="trajectory.csv source")
    traj.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convergence":
            labels = args.label or []
            if labels and len(labels) != len(args.csv):
                print("need one --label per --csv (or none)", file=sys.stderr)
                return 1
            specs = [
                CurveSpec(
                    label=labels[i] if labels else "",
                    source=source,
                    band=not args.no_band,
                )
                for i, source in enumerate(args.csv)
            ]
            path = plot_convergence(specs, args.out, log_scale=args.log, zoom_window=args.zoom)
        else:
            path = plot_trajectory(args.csv, args.out)
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
