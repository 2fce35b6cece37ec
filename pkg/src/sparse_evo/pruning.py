"""Masks, pruning scores, global thresholds and baseline constructions.

Masks are boolean numpy arrays of length D. A pruning step keeps
``floor((1 - p) * n)`` of the ``n`` current survivors, dropping the
lowest-scoring coordinates over all layers at once; ties at the cutoff
are broken by index (lower index pruned first).
"""

from __future__ import annotations

import logging
import math
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DimensionError, LineageExhausted
from .es import SIGMA_FLOOR
from .net import LayerLayout

log = logging.getLogger(__name__)

HEURISTICS = ("final_magnitude", "snr", "movement", "magnitude_increase", "init_magnitude")
BASELINES = ("random_global", "layerwise_matched", "permuted_mask")


def dense_mask(d: int) -> np.ndarray:
    return np.ones(d, dtype=bool)


def density(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    return float(mask.sum()) / mask.size


def survivors_after(n: int, p) -> int:
    """``floor((1 - p) * n)`` in exact arithmetic (``p`` read as its decimal repr)."""
    keep = Fraction(1) - Fraction(str(p))
    return math.floor(keep * n)


def survivor_schedule(d: int, p, steps: int) -> list[int]:
    counts = [d]
    for _ in range(steps):
        counts.append(survivors_after(counts[-1], p))
    return counts


def score_weights(heuristic: str, theta0, theta_f, sigma_f=None, mask=None) -> np.ndarray:
    """Per-coordinate keep-scores (higher survives); masked-out coordinates get ``-inf``."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta_f = np.asarray(theta_f, dtype=np.float64)
    if theta0.shape != theta_f.shape:
        raise DimensionError("theta0 and theta_f differ in length")
    if heuristic == "final_magnitude":
        s = np.abs(theta_f)
    elif heuristic == "snr":
        if sigma_f is None:
            raise ConfigError("snr scores need the final search standard deviations")
        sigma = np.asarray(sigma_f, dtype=np.float64)
        active = np.ones(sigma.shape, bool) if mask is None else np.asarray(mask, bool)
        low = active & (sigma <= 0)
        if low.any():
            log.warning("%d surviving coordinates have sigma=0; using sigma floor %g",
                        int(low.sum()), SIGMA_FLOOR)
        s = np.abs(theta_f) / np.maximum(sigma, SIGMA_FLOOR)
    elif heuristic == "movement":
        s = np.abs(theta_f - theta0)
    elif heuristic == "magnitude_increase":
        s = np.abs(theta_f) - np.abs(theta0)
    elif heuristic == "init_magnitude":
        s = np.abs(theta0)
    else:
        raise ConfigError(f"unknown pruning heuristic {heuristic!r}; expected one of {HEURISTICS}")
    if mask is not None:
        s = np.where(np.asarray(mask, bool), s, -np.inf)
    return s


def prune_step(scores, mask, p, prunable=None) -> tuple[np.ndarray, float]:
    """Drop the lowest-scoring survivors so that ``floor((1-p) n)`` remain.

    Only coordinates flagged in ``prunable`` (default: all) compete; the
    others are kept regardless. Returns the new mask and the realised
    threshold, the midpoint between the highest pruned and lowest kept
    score (``-inf`` when nothing is pruned).
    """
    if not 0 < p < 1:
        raise ConfigError(f"pruning ratio must lie in (0, 1), got {p}")
    mask = np.asarray(mask, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != mask.shape:
        raise DimensionError("scores and mask differ in length")
    pool = mask if prunable is None else mask & np.asarray(prunable, bool)
    idx = np.flatnonzero(pool)
    n = idx.size
    if n < 2:
        raise LineageExhausted(f"only {n} prunable survivors left")
    n_drop = n - survivors_after(n, p)
    order = idx[np.lexsort((idx, scores[idx]))]  # ascending score, then index
    new = mask.copy()
    if n_drop == 0:
        return new, -np.inf
    new[order[:n_drop]] = False
    threshold = 0.5 * (scores[order[n_drop - 1]] + scores[order[n_drop]]) if n_drop < n else np.inf
    return new, float(threshold)


def layer_permutation(layout: LayerLayout, rng: np.random.Generator) -> np.ndarray:
    """Index array permuting coordinates uniformly within each layout entry."""
    perm = np.arange(layout.size)
    for e in layout:
        perm[e.slice] = e.offset + rng.permutation(e.length)
    return perm


def layer_counts(mask, layout: LayerLayout) -> np.ndarray:
    mask = np.asarray(mask, bool)
    return np.array([int(mask[e.slice].sum()) for e in layout])


def baseline_mask(kind: str, reference_mask, layout: LayerLayout, rng: np.random.Generator) -> np.ndarray:
    """Random mask matched to ``reference_mask``.

    ``random_global`` keeps the total count, ``layerwise_matched`` keeps
    every layer's count, ``permuted_mask`` shuffles the reference bits
    within each layer.
    """
    ref = np.asarray(reference_mask, bool)
    if ref.size != layout.size:
        raise DimensionError("reference mask does not match the layout")
    if kind == "random_global":
        out = np.zeros_like(ref)
        out[rng.choice(ref.size, size=int(ref.sum()), replace=False)] = True
        return out
    if kind == "layerwise_matched":
        out = np.zeros_like(ref)
        for e, c in zip(layout, layer_counts(ref, layout)):
            out[e.offset + rng.choice(e.length, size=c, replace=False)] = True
        return out
    if kind == "permuted_mask":
        return ref[layer_permutation(layout, rng)]
    raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def permute_init(init, mask, layout: LayerLayout, rng: np.random.Generator) -> np.ndarray:
    """Shuffle surviving initial values among the surviving positions of each layer.

    Masked-out coordinates come back as zero.
    """
    init = np.asarray(init, dtype=np.float64)
    mask = np.asarray(mask, bool)
    out = np.where(mask, init, 0.0)
    for e in layout:
        pos = e.offset + np.flatnonzero(mask[e.slice])
        out[pos] = init[pos[rng.permutation(pos.size)]]
    return out
