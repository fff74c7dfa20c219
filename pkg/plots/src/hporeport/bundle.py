"""Report bundle parsing and validation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

SUPPORTED_SCHEMA = 1


class BundleError(ValueError):
    pass


@dataclass
class AdtmTable:
    strategies: list[str]
    iterations: list[int]
    mean: dict[str, list[float]]  # strategy -> curve
    std: dict[str, list[float]]


@dataclass
class ReportBundle:
    adtm: AdtmTable
    cd: dict
    correlations: dict
    warmstart_size: int
    alpha: float


def load_bundle(bundle_dir: str | Path) -> ReportBundle:
    bundle_dir = Path(bundle_dir)
    adtm_path = bundle_dir / "adtm.csv"
    cd_path = bundle_dir / "cd.json"
    corr_path = bundle_dir / "correlations.json"
    for path in (adtm_path, cd_path, corr_path):
        if not path.exists():
            raise BundleError(f"bundle incomplete: missing {path.name}")

    with open(cd_path) as fh:
        cd = json.load(fh)
    if cd.get("schema_version") != SUPPORTED_SCHEMA:
        raise BundleError(f"unsupported cd.json schema {cd.get('schema_version')}")
    with open(corr_path) as fh:
        correlations = json.load(fh)
    if correlations.get("schema_version") != SUPPORTED_SCHEMA:
        raise BundleError("unsupported correlations.json schema")

    mean: dict[str, list[float]] = {}
    std: dict[str, list[float]] = {}
    strategies: list[str] = []
    iterations: set[int] = set()
    with open(adtm_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["strategy", "iteration", "mean", "std"]:
            raise BundleError(f"unexpected adtm.csv header {reader.fieldnames}")
        for row in reader:
            s = row["strategy"]
            if s not in mean:
                strategies.append(s)
                mean[s], std[s] = [], []
            mean[s].append(float(row["mean"]))
            std[s].append(float(row["std"]))
            iterations.add(int(row["iteration"]))
    if not strategies:
        raise BundleError("adtm.csv has no rows")
    lengths = {len(v) for v in mean.values()}
    if len(lengths) != 1:
        raise BundleError("strategies disagree on curve length")
    if set(cd.get("strategies", [])) != set(strategies):
        raise BundleError("cd.json and adtm.csv disagree on strategies")

    return ReportBundle(
        adtm=AdtmTable(strategies, sorted(iterations), mean, std),
        cd=cd,
        correlations=correlations,
        warmstart_size=int(cd["warmstart_size"]),
        alpha=float(cd["alpha"]),
    )
