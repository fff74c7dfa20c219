"""ADTM curve figure: mean scaled regret per strategy over iterations,
with a +/-1 std band and a dashed line where the warm-start phase ends."""

from __future__ import annotations

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .bundle import ReportBundle, load_bundle


def render_adtm(bundle: ReportBundle, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    table = bundle.adtm
    iterations = np.asarray(table.iterations)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for strategy in table.strategies:
        mean = np.asarray(table.mean[strategy])
        std = np.asarray(table.std[strategy])
        ax.plot(iterations, mean, label=strategy, linewidth=1.8)
        ax.fill_between(iterations, mean - std, mean + std, alpha=0.15)
    ax.axvline(bundle.warmstart_size, linestyle="--", color="black", linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("average distance to minimum")
    ax.set_xlim(iterations.min(), iterations.max())
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("Warm-start comparison (ADTM)")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Render the ADTM figure from a report bundle.")
    parser.add_argument("--bundle", required=True, help="directory holding adtm.csv / cd.json")
    parser.add_argument("--out", required=True, help="output image path (png/svg/pdf)")
    args = parser.parse_args(argv)
    path = render_adtm(load_bundle(args.bundle), args.out)
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
