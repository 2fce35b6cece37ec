"""Closed-form test functions evaluated directly on the parameter vector.

Fitness is always maximised, so each task returns the negated objective.
The network spec is ignored apart from the mask; these tasks exist to
check optimiser behaviour against known optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError


class _DirectTask:
    kind = "synthetic"

    def objective(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_spec(self, spec, dim: int):
        pass

    def draw_eval(self, rng):
        return None

    def fitness(self, spec, params, mask, ctx=None):
        x = np.atleast_2d(np.asarray(params, dtype=np.float64))
        if mask is not None:
            x = x * mask
        return -self.objective(x)

    def test_metric(self, spec, params, mask):
        return float(self.fitness(spec, params, mask)[0])

    def test_loss(self, spec, params, mask):
        return -self.test_metric(spec, params, mask)


@dataclass(frozen=True)
class SphereTask(_DirectTask):
    kind = "sphere"

    def objective(self, x):
        return np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class RosenbrockTask(_DirectTask):
    kind = "rosenbrock"

    def objective(self, x):
        if x.shape[-1] < 2:
            raise DimensionError("rosenbrock needs at least two coordinates")
        a, b = x[..., :-1], x[..., 1:]
        return np.sum(100.0 * (b - a * a) ** 2 + (1.0 - a) ** 2, axis=-1)


@dataclass(frozen=True)
class QuadraticFormTask(_DirectTask):
    """``(x - center)^T A (x - center)`` with diagonal ``A = diag(curvature)``."""

    curvature: tuple = (1.0,)
    center: tuple | None = None
    kind = "quadratic_form"

    def __post_init__(self):
        if any(c < 0 for c in self.curvature):
            raise ConfigError("quadratic_form curvature must be non-negative")

    def objective(self, x):
        a = np.asarray(self.curvature, dtype=np.float64)
        c = np.zeros(x.shape[-1]) if self.center is None else np.asarray(self.center, dtype=np.float64)
        if a.size not in (1, x.shape[-1]) or c.shape[-1] != x.shape[-1]:
            raise DimensionError("curvature/center length does not match the parameter vector")
        d = x - c
        return np.sum(a * d * d, axis=-1)
