"""Loss-landscape and ticket diagnostics.

All landscape evaluations go through ``task.test_loss`` / ``task.test_metric``
one parameter vector at a time, so a grid point at zero perturbation
reproduces the unperturbed value bit for bit.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, RankError
from .net import param_layout
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BarrierCurve:
    alphas: np.ndarray
    values: np.ndarray
    endpoints: tuple[float, float]  # metric at alpha=0 and alpha=1
    barrier: float
    metric: str


@dataclass(frozen=True)
class ProjectionCurve:
    xis: np.ndarray
    losses: np.ndarray
    dir_seed: int


@dataclass(frozen=True)
class QuadFit:
    c0: float
    c1: float
    c2: float
    residual: float  # root-mean-square residual

    @property
    def curvature(self) -> float:
        return self.c2


@dataclass(frozen=True)
class ProjectionGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray  # losses[i, j] at (alphas[i], betas[j])
    seeds: tuple[int, int]


def symmetric_grid(steps: int) -> np.ndarray:
    """``steps`` points on [-1, 1] built from integers so the grid is exactly symmetric."""
    if steps < 3 or steps % 2 == 0:
        raise ConfigError("grid needs an odd number (>= 3) of points so that it contains 0")
    half = steps // 2
    return np.arange(-half, half + 1) / half


def _metric_fn(task, spec, metric):
    if metric == "accuracy":
        return lambda p: task.test_metric(spec, p, None)
    if metric == "loss":
        return lambda p: task.test_loss(spec, p, None)
    raise ConfigError(f"unknown barrier metric {metric!r}")


def barrier_curve(task, spec, theta_a, theta_b, grid_size: int = 25, metric: str = "accuracy") -> BarrierCurve:
    """Metric along ``alpha * theta_a + (1 - alpha) * theta_b``.

    The barrier is the largest drop of the curve below the straight line
    between the endpoint values (largest rise above it for ``metric="loss"``).
    Endpoints carry their own sparsity (pruned entries are zero), so the
    interpolated network is evaluated without an extra mask.
    """
    a = np.asarray(theta_a, dtype=np.float64)
    b = np.asarray(theta_b, dtype=np.float64)
    if a.shape != b.shape or (spec is not None and a.size != spec.num_params):
        raise DimensionError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    if grid_size < 2:
        raise ConfigError("barrier grid needs at least 2 points")
    f = _metric_fn(task, spec, metric)
    k = np.arange(grid_size)
    w_a = k / (grid_size - 1)
    w_b = (grid_size - 1 - k) / (grid_size - 1)
    values = np.array([f(wa * a + wb * b) for wa, wb in zip(w_a, w_b)])
    v0, v1 = values[0], values[-1]
    line = w_a * v1 + w_b * v0
    gap = line - values if metric == "accuracy" else values - line
    return BarrierCurve(alphas=w_a, values=values, endpoints=(float(v0), float(v1)),
                        barrier=float(max(gap.max(), 0.0)), metric=metric)


def random_direction(dim: int, dir_seed: int) -> np.ndarray:
    return stream(dir_seed, "directions", 0).standard_normal(dim)


def project_loss_1d(task, spec, theta_f, dir_seed: int, xis=None, mask=None) -> ProjectionCurve:
    """Test loss at ``theta_f + xi * eta`` with ``eta ~ N(0, I)`` fixed by ``dir_seed``."""
    theta_f = np.asarray(theta_f, dtype=np.float64)
    xis = symmetric_grid(21) if xis is None else np.asarray(xis, dtype=np.float64)
    if np.any(np.abs(xis) > 1):
        raise ConfigError("perturbation strengths must lie in [-1, 1]")
    eta = random_direction(theta_f.size, dir_seed)
    losses = np.array([task.test_loss(spec, theta_f + xi * eta, mask) for xi in xis])
    return ProjectionCurve(xis=xis, losses=losses, dir_seed=dir_seed)


def fit_curvature(curve) -> QuadFit:
    """Least-squares fit of ``c0 + c1 xi + c2 xi^2`` to a projection curve."""
    if isinstance(curve, ProjectionCurve):
        xis, losses = curve.xis, curve.losses
    else:
        xis, losses = curve
    xis = np.asarray(xis, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if np.unique(xis).size < 3:
        raise RankError("curvature fit needs at least 3 distinct perturbation strengths")
    design = np.stack([np.ones_like(xis), xis, xis * xis], axis=1)
    coef, *_ = np.linalg.lstsq(design, losses, rcond=None)
    resid = losses - design @ coef
    return QuadFit(c0=float(coef[0]), c1=float(coef[1]), c2=float(coef[2]),
                   residual=float(np.sqrt(np.mean(resid ** 2))))


def unit_blocks(spec) -> list[np.ndarray]:
    """Index sets of the filter/neuron blocks: each output unit's incoming weights plus its bias."""
    layout = param_layout(spec)
    blocks = []
    for w, b in zip(layout[0::2], layout[1::2]):
        n_out = w.shape[-1]
        w_idx = np.arange(w.offset, w.offset + w.length).reshape(-1, n_out)
        for j in range(n_out):
            blocks.append(np.concatenate([w_idx[:, j], [b.offset + j]]))
    return blocks


def normalized_directions(spec, reference, seeds=(0, 1)) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian directions rescaled block-wise to the reference network's block norms."""
    reference = np.asarray(reference, dtype=np.float64)
    out = []
    for s in seeds:
        eta = random_direction(reference.size, s)
        for idx in unit_blocks(spec):
            ref_norm = np.linalg.norm(reference[idx])
            if ref_norm == 0:
                log.warning("zero-norm reference block at offset %d left unscaled", idx[0])
                continue
            eta[idx] *= ref_norm / np.linalg.norm(eta[idx])
        out.append(eta)
    return out[0], out[1]


def project_loss_2d(task, spec, theta_f, reference_dense, seeds=(0, 1), steps: int = 51,
                    mask=None, directions=None) -> ProjectionGrid:
    """Test loss over ``theta_f + a * eta1 + b * eta2`` for ``a, b`` on a symmetric grid.

    Pass the same ``directions`` (from :func:`normalized_directions` on the
    iteration-0 network) to compare different pruning iterations.
    """
    theta_f = np.asarray(theta_f, dtype=np.float64)
    eta1, eta2 = directions if directions is not None else normalized_directions(spec, reference_dense, seeds)
    grid = symmetric_grid(steps)
    losses = np.empty((steps, steps))
    for i, a in enumerate(grid):
        for j, b in enumerate(grid):
            losses[i, j] = task.test_loss(spec, theta_f + a * eta1 + b * eta2, mask)
    return ProjectionGrid(alphas=grid, betas=grid.copy(), losses=losses, seeds=tuple(seeds))


def pearson(x, y) -> float:
    """Two-pass Pearson correlation; NaN when either side is (numerically) constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise DimensionError("pearson inputs differ in length")
    if x.size < 3:
        return float("nan")
    dx = x - x.mean()
    dy = y - y.mean()
    sx, sy = np.sqrt(np.sum(dx * dx)), np.sqrt(np.sum(dy * dy))
    tol = 1e-12 * np.sqrt(x.size)
    if sx <= tol * max(abs(x.mean()), 1e-300) or sy <= tol * max(abs(y.mean()), 1e-300):
        return float("nan")
    return float(np.sum(dx * dy) / (sx * sy))


def snr_magnitude_corr(lineage) -> np.ndarray:
    """Per iteration: correlation of ``|theta|`` and ``|theta| / sigma`` over surviving weights."""
    out = []
    for it in lineage.iterations:
        if it.sigma_f is None:
            raise ConfigError("SNR correlation needs an ES lineage with recorded sigma")
        keep = np.asarray(it.mask, bool)
        mag = np.abs(it.theta_f[keep])
        out.append(pearson(mag, mag / it.sigma_f[keep]) if keep.sum() >= 3 else float("nan"))
    return np.array(out)


def weight_stats(lineage) -> list[dict]:
    """Per iteration and layout entry: density and summary statistics of surviving final weights."""
    layout = param_layout(lineage.spec)
    rows = []
    for it in lineage.iterations:
        mask = np.asarray(it.mask, bool)
        for e in layout:
            keep = mask[e.slice]
            vals = it.theta_f[e.slice][keep]
            rows.append({
                "iteration": it.t,
                "layer": e.layer_id,
                "kind": e.kind,
                "size": e.length,
                "survivors": int(keep.sum()),
                "density": float(keep.mean()),
                "mean_abs": float(np.abs(vals).mean()) if vals.size else float("nan"),
                "std": float(vals.std()) if vals.size else float("nan"),
                "max_abs": float(np.abs(vals).max()) if vals.size else float("nan"),
            })
    return rows


def _stderr(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("nan")


def normalize_conditions(records) -> tuple[list[dict], list[dict]]:
    """Min-max normalise scores per task, then aggregate per (condition, sparsity).

    ``records`` is an iterable of dicts with keys ``task``, ``condition``,
    ``sparsity``, ``seed`` and ``score``. Returns the records with an
    added ``normalized`` value and a summary list of
    ``{condition, sparsity, mean, stderr, n}``. A task whose scores are
    all equal is normalised to 0.5 and marked ``flagged``.
    """
    records = [dict(r) for r in records]
    cells = defaultdict(set)
    by_task = defaultdict(list)
    for r in records:
        cells[(r["task"], r["sparsity"])].add(r["condition"])
        by_task[r["task"]].append(r)
    for key, conds in cells.items():
        if len(conds) < 2:
            raise ConfigError(f"cell {key} has fewer than two conditions")
    for rows in by_task.values():
        vals = np.array([r["score"] for r in rows], dtype=np.float64)
        lo, hi = vals.min(), vals.max()
        for r, v in zip(rows, vals):
            if hi > lo:
                r["normalized"] = float((v - lo) / (hi - lo))
                r["flagged"] = False
            else:
                r["normalized"] = 0.5
                r["flagged"] = True
    groups = defaultdict(list)
    for r in records:
        groups[(r["condition"], r["sparsity"])].append(r["normalized"])
    summary = []
    for (cond, sp), vals in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), -kv[0][1])):
        v = np.array(vals)
        summary.append({"condition": cond, "sparsity": sp, "mean": float(v.mean()),
                        "stderr": _stderr(v), "n": int(v.size)})
    return records, summary
