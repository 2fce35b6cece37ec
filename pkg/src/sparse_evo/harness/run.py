"""Experiment families and their on-disk artifacts.

An artifact directory contains::

    manifest.json        family, config, config hash, seeds, version, evaluation count
    metrics.csv          one row per (seed, condition, iteration) evaluation
    lineages/seed{S}_{heuristic}/   persisted lineages (prune / baselines)
    *.csv                family-specific analysis tables
    timing.json          wallclock per seed (the only non-reproducible file)
"""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import __version__, analysis
from ..errors import ConfigError, TransferError
from ..lineage import PruneConfig, iterative_prune, load_lineage, train_ticket
from ..net import init_params, param_layout
from ..pruning import baseline_mask, density, layer_permutation, permute_init
from ..rng import stream
from .config import BASELINE_KINDS, ExperimentConfig

log = logging.getLogger(__name__)

METRIC_FIELDS = ["seed", "condition", "iteration", "survivors", "density", "metric"]


def write_csv(path: Path, rows: list[dict], fields: list[str] | None = None):
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fields})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    return v


def lineage_dir(root: Path, seed: int, heuristic: str) -> Path:
    return Path(root) / "lineages" / f"seed{seed}_{heuristic}"


def _metric_row(seed, condition, t, mask, metric):
    return {"seed": seed, "condition": condition, "iteration": t,
            "survivors": int(np.sum(mask)), "density": density(mask), "metric": metric}


def _iterations(selected, available):
    if selected is None:
        return list(available)
    bad = [t for t in selected if t not in available]
    if bad:
        raise ConfigError(f"iterations {bad} not present (have {list(available)})")
    return list(selected)


def baseline_ticket(kind: str, lineage, t: int, k: int, seed: int):
    """Mask and initial weights of baseline ``kind`` matched to iteration ``t`` of ``lineage``."""
    ref = lineage.iterations[t].mask
    theta0 = lineage.theta0
    layout = param_layout(lineage.spec)
    rng = stream(seed, "baselines", k, t)
    if kind == "permuted_weights":
        return ref.copy(), permute_init(theta0, ref, layout, rng)
    if kind == "permuted_mask":
        # surviving initial values travel with their mask bits
        perm = layer_permutation(layout, rng)
        return ref[perm], (ref * theta0)[perm]
    mask = baseline_mask(kind, ref, layout, rng)
    return mask, mask * theta0


# -- families ------------------------------------------------------------------

def _run_prune(cfg: ExperimentConfig, out: Path, seed: int, rows: list, tables: dict):
    lineages = {}
    for h in cfg.heuristics:
        pc = cfg.prune_config(seed, h)
        lin = iterative_prune(pc, out_dir=lineage_dir(out, seed, h))
        lineages[h] = lin
        for it in lin.iterations:
            rows.append(_metric_row(seed, h, it.t, it.mask, it.metric))
        for r in analysis.weight_stats(lin):
            tables.setdefault("weight_stats", []).append({"seed": seed, "condition": h, **r})
        if pc.algo != "gd":
            for it, c in zip(lin.iterations, analysis.snr_magnitude_corr(lin)):
                tables.setdefault("correlations", []).append(
                    {"seed": seed, "condition": h, "iteration": it.t,
                     "survivors": int(it.mask.sum()), "density": density(it.mask), "pearson": c})
    if cfg.experiment != "baselines":
        return
    ref = lineages[cfg.baseline_reference]
    pc = ref.config
    task = pc.build_task()
    for t in _iterations(cfg.baseline_iterations, range(len(ref.iterations))):
        for kind in cfg.baselines:
            mask, init = baseline_ticket(kind, ref, t, BASELINE_KINDS.index(kind), seed)
            metric = train_ticket(pc, task, mask, init, t)[2]
            rows.append(_metric_row(seed, kind, t, mask, metric))


def _source_lineage(cfg: ExperimentConfig, seed: int):
    src = lineage_dir(cfg.options["source"], seed, cfg.options["heuristic"])
    if not (src / "lineage.json").exists():
        raise ConfigError(f"missing source lineage {src}")
    return load_lineage(src)


def transfer_config(cfg: ExperimentConfig, source: PruneConfig, seed: int) -> PruneConfig:
    o = cfg.options
    target = source.to_dict()
    target.update(algo=o["algo"], hp=o["hp"], seed=seed, threads=int(cfg.threads))
    if o["algo"] == "gd":
        target["heuristic"] = "final_magnitude"
    for key in ("G", "N", "task", "network", "sigma_init"):
        if o[key] is not None:
            target[key] = o[key]
    pc = PruneConfig(**target)
    src_layout = [(e.kind, e.shape) for e in param_layout(source.spec)]
    dst_layout = [(e.kind, e.shape) for e in param_layout(pc.spec)]
    if src_layout != dst_layout:
        raise TransferError(f"source layout {src_layout} does not match target layout {dst_layout}")
    pc.build_task().check_spec(pc.spec, pc.spec.num_params)
    return pc


def _run_transfer(cfg, out, seed, rows, tables, prepared):
    lin, pc = prepared
    task = pc.build_task()
    init0 = lin.theta0 if cfg.options["use_init"] else init_params(pc.spec, pc.init_scheme, seed)
    for t in _iterations(cfg.options["iterations"], range(len(lin.iterations))):
        mask = lin.iterations[t].mask
        metric = train_ticket(pc, task, mask, mask * init0, t)[2]
        rows.append(_metric_row(seed, "transfer_" + cfg.options["heuristic"], t, mask, metric))
        for kind in cfg.options["baselines"]:
            bmask = baseline_mask(kind, mask, param_layout(pc.spec), stream(seed, "baselines", BASELINE_KINDS.index(kind), t))
            metric = train_ticket(pc, task, bmask, bmask * init0, t)[2]
            rows.append(_metric_row(seed, kind, t, bmask, metric))


def _run_connect(cfg, out, seed, rows, tables, prepared):
    lin = prepared
    o = cfg.options
    pc = lin.config
    task = pc.build_task()
    gd_pc = None
    if o["gd_twins"]:
        gd_pc = PruneConfig(**{**pc.to_dict(), "algo": "gd", "heuristic": "final_magnitude",
                               "G": o["gd_G"], "hp": o["gd_hp"], "seed": seed})
    for t in _iterations(o["iterations"], range(len(lin.iterations))):
        mask = lin.iterations[t].mask
        init = mask * lin.theta0
        pairs = []
        if o["es_pairs"]:
            pairs.append(("es", pc))
        if gd_pc is not None:
            pairs.append(("gd", gd_pc))
        for name, trainer in pairs:
            ends = [train_ticket(trainer, task, mask, init, t, data_seed=ds)[0] for ds in o["data_seeds"]]
            curve = analysis.barrier_curve(task, pc.spec, ends[0], ends[1], o["grid_size"], o["metric"])
            base = {"seed": seed, "pair": name, "iteration": t, "survivors": int(mask.sum()),
                    "density": density(mask)}
            tables.setdefault("barriers", []).append(
                {**base, "metric": o["metric"], "endpoint_a": curve.endpoints[1],
                 "endpoint_b": curve.endpoints[0], "barrier": curve.barrier})
            for a, v in zip(curve.alphas, curve.values):
                tables.setdefault("barrier_curves", []).append({**base, "alpha": a, "value": v})


def _run_project(cfg, out, seed, rows, tables, prepared):
    lin = prepared
    o = cfg.options
    pc = lin.config
    spec = pc.spec
    task = pc.build_task()
    xis = analysis.symmetric_grid(o["xi_steps"])
    directions = None
    if o["grid_steps"]:
        directions = analysis.normalized_directions(spec, lin.iterations[0].theta_f, o["grid_seeds"])
    gd_pc = None
    if o["compare_gd"]:
        gd_pc = PruneConfig(**{**pc.to_dict(), "algo": "gd", "heuristic": "final_magnitude",
                               "G": o["gd_G"], "hp": o["gd_hp"], "seed": seed})
    for t in _iterations(o["iterations"], range(len(lin.iterations))):
        it = lin.iterations[t]
        optima = [(pc.algo, it.theta_f)]
        if gd_pc is not None:
            optima.append(("gd", train_ticket(gd_pc, task, it.mask, it.mask * lin.theta0, t)[0]))
        base = {"seed": seed, "iteration": t, "survivors": int(it.mask.sum()), "density": density(it.mask)}
        for trainer, theta in optima:
            for ds in o["dir_seeds"]:
                curve = analysis.project_loss_1d(task, spec, theta, ds, xis, it.mask)
                fit = analysis.fit_curvature(curve)
                for xi, loss in zip(curve.xis, curve.losses):
                    tables.setdefault("projection1d", []).append(
                        {**base, "trainer": trainer, "dir_seed": ds, "xi": xi, "loss": loss})
                tables.setdefault("curvature", []).append(
                    {**base, "trainer": trainer, "dir_seed": ds, "c0": fit.c0, "c1": fit.c1,
                     "c2": fit.c2, "residual": fit.residual})
        if directions is not None:
            grid = analysis.project_loss_2d(task, spec, it.theta_f, None, o["grid_seeds"],
                                            o["grid_steps"], it.mask, directions)
            for i, a in enumerate(grid.alphas):
                for j, b in enumerate(grid.betas):
                    tables.setdefault("projection2d", []).append(
                        {**base, "alpha": a, "beta": b, "loss": grid.losses[i, j]})


FAMILY_RUNNERS = {"transfer": _run_transfer, "connect": _run_connect, "project": _run_project}


def _prepare(cfg: ExperimentConfig, seed: int):
    """Load and check everything a seed needs before any training starts."""
    if cfg.experiment == "transfer":
        lin = _source_lineage(cfg, seed)
        return lin, transfer_config(cfg, lin.config, seed)
    if cfg.experiment in ("connect", "project"):
        lin = _source_lineage(cfg, seed)
        if cfg.experiment == "project" and cfg.options["grid_steps"]:
            analysis.symmetric_grid(cfg.options["grid_steps"])
        return lin
    return None


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Run every seed of ``cfg`` and write the artifact directory ``out_dir``."""
    out = Path(out_dir)
    prepared = {seed: _prepare(cfg, seed) for seed in cfg.seeds}
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    tables: dict[str, list] = {}
    timing = {}
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        if cfg.experiment in ("prune", "baselines"):
            _run_prune(cfg, out, seed, rows, tables)
        else:
            FAMILY_RUNNERS[cfg.experiment](cfg, out, seed, rows, tables, prepared[seed])
        timing[str(seed)] = time.perf_counter() - t0
        log.info("seed %d done in %.1fs", seed, timing[str(seed)])
    write_csv(out / "metrics.csv", rows, METRIC_FIELDS)
    for name, table in tables.items():
        write_csv(out / f"{name}.csv", table)
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict() | {"threads": None},
        "config_hash": cfg.config_hash(),
        "p": cfg.p,
        "task": cfg.task.get("kind"),
        "seeds": list(cfg.seeds),
        "version": __version__,
        "evaluations": len(rows),
        "tables": sorted(tables),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    return out
