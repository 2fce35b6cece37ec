"""Diagonal-Gaussian evolution strategies restricted to a weight mask.

Four strategies share one search-state representation (mean ``theta`` and
per-weight standard deviation ``sigma``):

``open_es``
    Finite-difference ES. The Monte-Carlo gradient of the smoothed
    fitness drives an Adam step on the mean; sigma is fixed apart from an
    optional multiplicative decay.
``pgpe``
    Same mean update as ``open_es``; sigma follows the PGPE likelihood
    gradient ``r_i * (eps_i**2 - 1) * sigma`` with baseline-subtracted
    shaped fitness ``r_i`` and a per-step relative change limit.
``snes``
    Separable natural ES with log-rank utilities: ``theta += lr_mean *
    sigma * sum(u_i s_i)``, ``sigma *= exp(lr_sigma / 2 * sum(u_i (s_i**2 - 1)))``.
``sep_cma``
    CMA-ES with a diagonal covariance: weighted recombination of the
    top half, cumulative step-size adaptation and rank-one plus rank-mu
    updates of the diagonal with learning rates scaled by ``(n + 2) / 3``.

Every update multiplies mean and sigma by the mask afterwards, so
masked coordinates stay exactly zero. On masked-in coordinates sigma is
bounded below by :data:`SIGMA_FLOOR`. The full update equations are
written out in ``docs/es_updates.md``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DimensionError, TaskEvaluationError

log = logging.getLogger(__name__)

ALGOS = ("open_es", "pgpe", "snes", "sep_cma")
SHAPING_MODES = ("centered_rank", "z_score", "raw")
SIGMA_FLOOR = 1e-8

DEFAULT_HP = {
    "open_es": {"lrate": 0.01, "antithetic": True, "fitness_shaping": "centered_rank",
                "sigma_decay": 1.0, "sigma_min": 0.0, "lrate_decay": 1.0},
    "pgpe": {"lrate": 0.01, "lrate_sigma": 0.1, "sigma_max_change": 0.2, "antithetic": True,
             "fitness_shaping": "centered_rank", "lrate_decay": 1.0},
    "snes": {"lrate_mean": 1.0, "lrate_sigma": None, "antithetic": False},
    "sep_cma": {"elite_ratio": 0.5, "antithetic": False},
}


def strategy_hp(algo: str, overrides: dict | None = None) -> dict:
    """Defaults for ``algo`` merged with ``overrides``; unknown keys are rejected."""
    if algo not in ALGOS:
        raise ConfigError(f"unknown ES algorithm {algo!r}; expected one of {ALGOS}")
    hp = dict(DEFAULT_HP[algo])
    for k, v in (overrides or {}).items():
        if k not in hp:
            raise ConfigError(f"unknown hyperparameter {k!r} for {algo}")
        hp[k] = v
    if hp.get("fitness_shaping", "raw") not in SHAPING_MODES:
        raise ConfigError(f"unknown fitness shaping {hp['fitness_shaping']!r}")
    return hp


@dataclass(frozen=True)
class SearchState:
    mean: np.ndarray
    sigma: np.ndarray
    strategy_state: dict = field(default_factory=dict)
    generation: int = 0


@dataclass(frozen=True)
class Population:
    candidates: np.ndarray
    noise: np.ndarray
    paired: bool


@dataclass(frozen=True)
class EvolvedState:
    final: SearchState
    fitness_history: dict  # "best", "mean", "best_so_far": arrays of length G
    wallclock: float = 0.0


def init_state(algo: str, mean: np.ndarray, sigma, mask: np.ndarray) -> SearchState:
    """Fresh search state with masked mean/sigma and zeroed accumulators."""
    if algo not in ALGOS:
        raise ConfigError(f"unknown ES algorithm {algo!r}")
    m = np.asarray(mask, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64) * m
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mean.shape) * m
    if np.any(sigma < 0):
        raise ConfigError("sigma must be non-negative")
    d = mean.shape[0]
    if algo in ("open_es", "pgpe"):
        ss = {"adam_m": np.zeros(d), "adam_v": np.zeros(d), "adam_t": 0}
    elif algo == "snes":
        ss = {}
    else:
        step = float(sigma.max()) if sigma.size and sigma.max() > 0 else 1.0
        ss = {"step": step, "C": np.where(m > 0, (sigma / step) ** 2, 1.0),
              "p_sigma": np.zeros(d), "p_c": np.zeros(d)}
    return SearchState(mean=mean, sigma=sigma.copy(), strategy_state=ss, generation=0)


def sample_population(state: SearchState, mask: np.ndarray, n: int, rng: np.random.Generator,
                      antithetic: bool = False) -> Population:
    """Draw ``n`` candidates ``mean + sigma * eps``.

    Noise on masked coordinates is set to zero. With ``antithetic`` the
    rows come in consecutive ``(+eps, -eps)`` pairs.
    """
    if n < 2:
        raise ConfigError(f"population size must be at least 2, got {n}")
    if antithetic and n % 2:
        raise ConfigError(f"antithetic sampling needs an even population, got {n}")
    d = state.mean.shape[0]
    m = np.asarray(mask, dtype=np.float64)
    if antithetic:
        half = rng.standard_normal((n // 2, d))
        noise = np.empty((n, d))
        noise[0::2] = half
        noise[1::2] = -half
    else:
        noise = rng.standard_normal((n, d))
    noise *= m
    candidates = state.mean + state.sigma * noise
    return Population(candidates=candidates, noise=noise, paired=antithetic)


def shape_fitness(raw, mode: str = "centered_rank") -> np.ndarray:
    """Transform raw fitness (higher is better) into update utilities.

    NaN fitness is ranked worst for ``centered_rank`` and replaced by the
    worst finite value for the other modes.
    """
    f = np.asarray(raw, dtype=np.float64)
    bad = ~np.isfinite(f)
    if bad.any():
        log.warning("%d non-finite fitness values ranked worst", int(bad.sum()))
        finite = f[~bad]
        worst = finite.min() if finite.size else 0.0
        f = np.where(bad, -np.inf if mode == "centered_rank" else worst, f)
    if mode == "centered_rank":
        if f.size < 2:
            return np.zeros_like(f)
        ranks = rankdata(f, method="average") - 1.0
        return ranks / (f.size - 1) - 0.5
    if mode == "z_score":
        std = f.std()
        if not std > 1e-12 * max(1.0, np.abs(f).max()):
            return np.zeros_like(f)
        return (f - f.mean()) / std
    if mode == "raw":
        return f.copy()
    raise ConfigError(f"unknown fitness shaping {mode!r}")


def fd_gradient(state: SearchState, pop: Population, utilities) -> np.ndarray:
    """Monte-Carlo estimate ``1/(N sigma) * sum_i u_i eps_i``; zero where sigma is zero."""
    u = np.asarray(utilities, dtype=np.float64)
    if u.shape != (pop.noise.shape[0],):
        raise DimensionError(f"need {pop.noise.shape[0]} utilities, got shape {u.shape}")
    g = u @ pop.noise / u.size
    sigma = state.sigma
    out = np.zeros_like(g)
    np.divide(g, sigma, out=out, where=sigma > 0)
    return out


def _adam_ascent(ss: dict, grad: np.ndarray, lr: float, b1=0.9, b2=0.999, eps=1e-8):
    t = ss["adam_t"] + 1
    m = b1 * ss["adam_m"] + (1 - b1) * grad
    v = b2 * ss["adam_v"] + (1 - b2) * grad * grad
    step = lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return step, {**ss, "adam_m": m, "adam_v": v, "adam_t": t}


def _nes_utilities(fitness: np.ndarray) -> np.ndarray:
    """Log-rank utilities of SNES, indexed like ``fitness``; they sum to zero."""
    n = fitness.size
    order = np.argsort(-fitness, kind="stable")
    raw = np.maximum(0.0, math.log(n / 2 + 1) - np.log(np.arange(1, n + 1)))
    util_sorted = raw / raw.sum() - 1.0 / n
    u = np.empty(n)
    u[order] = util_sorted
    return u


def _floor_sigma(sigma, m):
    return np.where(m > 0, np.maximum(sigma, SIGMA_FLOOR), 0.0)


def es_update(algo: str, state: SearchState, pop: Population, fitness, hp: dict | None = None,
              mask: np.ndarray | None = None) -> SearchState:
    """One strategy update from a sampled population and its raw fitness."""
    if algo not in ALGOS:
        raise ConfigError(f"unknown ES algorithm {algo!r}")
    hp = {**DEFAULT_HP[algo], **(hp or {})}
    f = np.asarray(fitness, dtype=np.float64)
    n = pop.noise.shape[0]
    if f.shape != (n,):
        raise DimensionError(f"need {n} fitness values, got shape {f.shape}")
    m = (np.asarray(mask, dtype=np.float64) if mask is not None
         else (state.sigma > 0).astype(np.float64))
    ss = state.strategy_state
    gen = state.generation

    if algo in ("open_es", "pgpe"):
        u = shape_fitness(f, hp["fitness_shaping"])
        grad = fd_gradient(state, pop, u)
        lr = hp["lrate"] * hp["lrate_decay"] ** gen
        step, ss = _adam_ascent(ss, grad, lr)
        mean = state.mean + step
        if algo == "open_es":
            sigma = state.sigma * hp["sigma_decay"]
            if hp["sigma_min"] > 0:
                sigma = np.maximum(sigma, hp["sigma_min"])
        else:
            r = u - u.mean()
            sigma_grad = (r @ (pop.noise ** 2 - 1.0)) / n * state.sigma
            delta = hp["lrate_sigma"] * sigma_grad
            lim = hp["sigma_max_change"] * state.sigma
            sigma = state.sigma + np.clip(delta, -lim, lim)
    elif algo == "snes":
        f = np.where(np.isfinite(f), f, -np.inf)
        u = _nes_utilities(f)
        d_eff = max(int((m > 0).sum()), 1)
        lr_sigma = hp["lrate_sigma"]
        if lr_sigma is None:
            lr_sigma = (3 + math.log(d_eff)) / (5 * math.sqrt(d_eff))
        grad_mu = u @ pop.noise
        grad_sigma = u @ (pop.noise ** 2 - 1.0)
        mean = state.mean + hp["lrate_mean"] * state.sigma * grad_mu
        sigma = state.sigma * np.exp(0.5 * lr_sigma * grad_sigma)
    elif algo == "sep_cma":
        mean, sigma, ss = _sep_cma_update(state, pop, f, hp, m)
    else:
        raise ConfigError(f"unknown ES algorithm {algo!r}")

    mean = mean * m
    sigma = _floor_sigma(sigma, m)
    if algo == "sep_cma":
        # keep the (step, C) parametrisation consistent with the floored sigma
        ss = {**ss, "C": np.where(m > 0, (sigma / ss["step"]) ** 2, 1.0)}
    return SearchState(mean=mean, sigma=sigma, strategy_state=ss, generation=gen + 1)


def _sep_cma_update(state, pop, f, hp, m):
    lam = f.size
    mu = int(math.floor(lam * hp["elite_ratio"]))
    if mu < 1:
        raise ConfigError(f"elite selection needs a positive number of parents (population {lam})")
    n = max(int((m > 0).sum()), 1)
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mu_eff = 1.0 / np.sum(w ** 2)

    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    sep = (n + 2) / 3
    c1, c_mu = c1 * sep, c_mu * sep
    if c1 + c_mu > 1:
        scale = 1.0 / (c1 + c_mu)
        c1, c_mu = c1 * scale, c_mu * scale
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    ss = state.strategy_state
    step, C = ss["step"], ss["C"]
    sqrt_c = np.sqrt(C)
    f = np.where(np.isfinite(f), f, -np.inf)
    elite = np.argsort(-f, kind="stable")[:mu]
    z = pop.noise[elite]  # standard-normal draws of the elite
    y = z * sqrt_c * m  # (x - mean) / step
    y_w = w @ y
    z_w = w @ z

    mean = state.mean + step * y_w
    p_sigma = (1 - c_sigma) * ss["p_sigma"] + math.sqrt(c_sigma * (2 - c_sigma) * mu_eff) * z_w * m
    g = state.generation + 1
    norm_ps = float(np.linalg.norm(p_sigma))
    h_sigma = norm_ps / math.sqrt(1 - (1 - c_sigma) ** (2 * g)) < (1.4 + 2 / (n + 1)) * chi_n
    p_c = (1 - c_c) * ss["p_c"] + h_sigma * math.sqrt(c_c * (2 - c_c) * mu_eff) * y_w
    C = ((1 - c1 - c_mu) * C
         + c1 * (p_c ** 2 + (1 - h_sigma) * c_c * (2 - c_c) * C)
         + c_mu * (w @ (y ** 2)))
    C = np.where(m > 0, C, 1.0)
    step = step * math.exp((c_sigma / d_sigma) * (norm_ps / chi_n - 1))
    sigma = step * np.sqrt(C) * m
    return mean, sigma, {"step": step, "C": C, "p_sigma": p_sigma, "p_c": p_c * m}


def evaluate_population(task, spec, candidates: np.ndarray, mask, ctx, threads: int = 1) -> np.ndarray:
    """Fitness of each row of ``candidates``, collected positionally.

    With ``threads > 1`` the rows are split into contiguous chunks and
    evaluated on a thread pool. Each candidate's arithmetic is independent
    of the chunking, so the result is bit-identical for any thread count.
    """
    n = candidates.shape[0]

    def run(lo, hi):
        return np.asarray(task.fitness(spec, candidates[lo:hi], mask, ctx), dtype=np.float64)

    try:
        if threads <= 1 or n < 2:
            out = run(0, n)
        else:
            bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, bounds[:-1], bounds[1:]))
            out = np.concatenate(parts)
    except Exception as exc:
        for i in range(n):
            try:
                run(i, i + 1)
            except Exception as inner:
                raise TaskEvaluationError(i, inner) from inner
        raise TaskEvaluationError(-1, exc) from exc
    return out


def evolve(algo: str, state0: SearchState, mask, task, G: int, N: int, rng: np.random.Generator,
           spec=None, hp: dict | None = None, threads: int = 1, callback=None) -> EvolvedState:
    """Run ``G`` generations of sample, evaluate, update on the masked weights."""
    if G < 1:
        raise ConfigError(f"number of generations must be at least 1, got {G}")
    hp = strategy_hp(algo, hp)
    m = np.asarray(mask, dtype=np.float64)
    state = state0
    best = np.empty(G)
    mean_f = np.empty(G)
    t0 = time.perf_counter()
    for g in range(G):
        pop = sample_population(state, m, N, rng, antithetic=hp["antithetic"])
        ctx = task.draw_eval(rng)
        fit = evaluate_population(task, spec, pop.candidates, m, ctx, threads)
        finite = fit[np.isfinite(fit)]
        best[g] = finite.max() if finite.size else np.nan
        mean_f[g] = finite.mean() if finite.size else np.nan
        state = es_update(algo, state, pop, fit, hp, m)
        if callback is not None:
            callback(g, state, fit)
    history = {"best": best, "mean": mean_f, "best_so_far": np.fmax.accumulate(best)}
    return EvolvedState(final=state, fitness_history=history, wallclock=time.perf_counter() - t0)
