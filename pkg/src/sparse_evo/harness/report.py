"""Aggregate artifact metrics across seeds."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .. import analysis
from ..errors import ConfigError
from .run import write_csv

SUMMARY_FIELDS = ["task", "condition", "iteration", "survivors", "density", "mean", "stderr", "n"]
NORMALIZED_FIELDS = ["condition", "density", "mean", "stderr", "n"]


def read_manifest(artifact) -> dict:
    path = Path(artifact) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{artifact} is not an artifact directory (no manifest.json)")
    return json.loads(path.read_text())


def read_metrics(artifact) -> list[dict]:
    with open(Path(artifact) / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def task_key(manifest: dict) -> str:
    return json.dumps(manifest["config"]["task"], sort_keys=True)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard error over seeds per (task, condition, iteration)."""
    groups = defaultdict(list)
    meta = {}
    for r in rows:
        key = (r["task"], r["condition"], int(r["iteration"]))
        groups[key].append(float(r["metric"]) if r["metric"] != "" else np.nan)
        meta[key] = (int(r["survivors"]), float(r["density"]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        v = np.array(groups[key])
        out.append({"task": key[0], "condition": key[1], "iteration": key[2],
                    "survivors": meta[key][0], "density": meta[key][1], "mean": float(v.mean()),
                    "stderr": float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else np.nan,
                    "n": int(v.size)})
    return out


def emit_report(artifacts, out_dir, allow_mixed: bool = False) -> Path:
    """Write ``summary.csv`` and (when possible) ``normalized.csv`` for a set of artifacts.

    Artifacts with different pruning ratios are always refused; different
    config hashes are refused unless ``allow_mixed``.
    """
    artifacts = list(artifacts)
    if not artifacts:
        raise ConfigError("report needs at least one artifact directory")
    manifests = [read_manifest(a) for a in artifacts]
    ps = {m["p"] for m in manifests}
    if len(ps) > 1:
        raise ConfigError(f"artifacts mix pruning ratios {sorted(ps)}; sparsity grids are not comparable")
    hashes = {m["config_hash"] for m in manifests}
    if len(hashes) > 1 and not allow_mixed:
        raise ConfigError(f"artifacts mix config hashes {sorted(hashes)}; pass --allow-mixed to combine")
    rows = []
    for a, m in zip(artifacts, manifests):
        for r in read_metrics(a):
            rows.append({**r, "task": task_key(m)})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    write_csv(out / "summary.csv", summary, SUMMARY_FIELDS)

    # normalised comparison: lineage iterations index the sparsity level
    records = [{"task": r["task"], "condition": r["condition"], "sparsity": round(1 - float(r["density"]), 12),
                "seed": r["seed"], "score": float(r["metric"])} for r in rows if r["metric"] != ""]
    try:
        _, norm = analysis.normalize_conditions(records)
    except ConfigError:
        norm = None
    if norm is not None:
        write_csv(out / "normalized.csv",
                  [{**n, "density": 1 - n["sparsity"]} for n in norm], NORMALIZED_FIELDS)
    return out
