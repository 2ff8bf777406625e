#!/usr/bin/env python3
"""Render a volume histogram CSV as a bar chart.

Example external plot tool for `dixonvol stats --plot-cmd`:

    dixonvol stats --volumes out/volumes.csv --out out/stats \
        --plot-cmd "python scripts/plot_histogram.py {csv} {out}"

Needs matplotlib, which is deliberately not a pipeline dependency.
"""

import csv
import sys


def main(csv_path: str, out_path: str) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        rows = [
            (float(r["bin_left"]), float(r["bin_right"]), int(r["count"]))
            for r in csv.DictReader(fh)
        ]
    if not rows:
        print("empty histogram, nothing to plot", file=sys.stderr)
        return 1
    lefts = [left for left, _, _ in rows]
    widths = [right - left for left, right, _ in rows]
    counts = [count for _, _, count in rows]

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(lefts, counts, width=widths, align="edge", edgecolor="none")
    ax.set_xlabel("volume [ml]")
    ax.set_ylabel("count")
    ax.set_title("Calculated volumes")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        sys.exit(2)
    sys.exit(main(sys.argv[1], sys.argv[2]))
