"""Critical-difference figure: strategies at their average ranks, with
horizontal bars connecting the groups that the bundle marks as
statistically indistinguishable. One panel per checkpoint."""

from __future__ import annotations

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .bundle import BundleError, ReportBundle, load_bundle


def _draw_panel(ax, strategies, ranks, groups, title):
    k = len(strategies)
    lo = np.floor(min(ranks))
    hi = np.ceil(max(ranks))
    ax.set_xlim(hi + 0.3, lo - 0.3)  # lower rank (better) on the right
    ax.spines[["left", "right", "bottom"]].set_visible(False)
    ax.xaxis.set_ticks_position("top")
    ax.set_xticks(np.arange(lo, hi + 1))
    ax.set_yticks([])
    ax.set_ylim(-k * 0.6 - len(groups) * 0.4 - 0.4, 0.6)

    order = np.argsort(ranks)
    for slot, idx in enumerate(order):
        y = -(slot + 1) * 0.55
        side = 1 if slot < (k + 1) // 2 else -1
        x_label = hi + 0.25 if slot < (k + 1) // 2 else lo - 0.25
        ha = "left" if slot < (k + 1) // 2 else "right"
        ax.plot([ranks[idx], ranks[idx]], [0, y], color="black", linewidth=0.8)
        ax.plot([ranks[idx], x_label], [y, y], color="black", linewidth=0.8)
        ax.text(x_label, y, f" {strategies[idx]} ({ranks[idx]:.2f}) ", va="center", ha=ha, fontsize=8)
    ax.axhline(0, color="black", linewidth=1.2)

    # bars exactly as listed in the bundle; no recomputation
    index = {s: i for i, s in enumerate(strategies)}
    bar_y = -k * 0.55 - 0.4
    for group in groups:
        xs = [ranks[index[s]] for s in group]
        ax.plot([min(xs) - 0.05, max(xs) + 0.05], [bar_y, bar_y], color="black", linewidth=3.0)
        bar_y -= 0.35
    ax.set_title(title, fontsize=10)


def render_cd(bundle: ReportBundle, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    cd = bundle.cd
    strategies = cd["strategies"]
    checkpoints = cd["checkpoints"]
    titles = {
        "warmstart_end": f"after warm-start (iteration {cd['warmstart_size']})",
        "final": "after full optimization",
    }
    fig, axes = plt.subplots(len(checkpoints), 1, figsize=(8, 2.6 * len(checkpoints)))
    if len(checkpoints) == 1:
        axes = [axes]
    for ax, (name, payload) in zip(axes, checkpoints.items()):
        if len(payload["average_ranks"]) != len(strategies):
            raise BundleError(f"checkpoint {name}: rank count mismatch")
        _draw_panel(
            ax,
            strategies,
            list(payload["average_ranks"]),
            payload["groups"],
            titles.get(name, name),
        )
    fig.suptitle(f"Critical-difference comparison (alpha = {bundle.alpha})", fontsize=11)
    fig.tight_layout(rect=(0, 0, 1, 0.96))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Render the CD figure from a report bundle.")
    parser.add_argument("--bundle", required=True, help="directory holding adtm.csv / cd.json")
    parser.add_argument("--out", required=True, help="output image path (png/svg/pdf)")
    args = parser.parse_args(argv)
    path = render_cd(load_bundle(args.bundle), args.out)
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
