"""Convenience entry: render every figure a bundle supports."""

from __future__ import annotations

from pathlib import Path

from .bundle import load_bundle
from .render_adtm import render_adtm
from .render_cd import render_cd


def render_bundle(bundle_dir: str | Path, out_dir: str | Path) -> list[Path]:
    bundle = load_bundle(bundle_dir)
    out_dir = Path(out_dir)
    return [
        render_adtm(bundle, out_dir / "adtm.png"),
        render_cd(bundle, out_dir / "cd.png"),
    ]
