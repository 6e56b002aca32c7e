"""
Box-plot of occlusion proportions written by `cli.py occ-stats`.

    python plot_occ_stats.py output/occ_stats/alpha.csv alpha.png
"""

import csv
from typing import Dict, List
import click
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_alpha_csv(path: str) -> Dict[int, List[float]]:
    by_delta: Dict[int, List[float]] = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            by_delta.setdefault(int(row["delta"]), []).append(float(row["alpha"]))
    return by_delta


def plot_alpha(by_delta: Dict[int, List[float]], out: str, title: str = "") -> None:
    deltas = sorted(by_delta)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([by_delta[d] for d in deltas], labels=[str(d) for d in deltas], showfliers=False)
    ax.set_xlabel("frame interval")
    ax.set_ylabel("occlusion proportion")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


@click.command()
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
@click.option("--title", type=str, default="", help="Plot title")
def main(src: str, dst: str, title: str):
    by_delta = read_alpha_csv(src)
    if not by_delta:
        raise click.ClickException("%s has no samples" % src)
    plot_alpha(by_delta, dst, title)


if __name__ == "__main__":
    main()
