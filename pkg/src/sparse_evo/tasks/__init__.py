"""Fitness and loss providers.

Every task exposes the same small protocol used by the ES and GD
engines and the analysis code:

``draw_eval(rng)``
    randomness for one generation (batch indices, episode starts),
    shared by all candidates of that generation;
``fitness(spec, params, mask, ctx)``
    fitness of each row of ``params`` (higher is better);
``test_metric(spec, params, mask)`` / ``test_loss(spec, params, mask)``
    held-out accuracy or return, and the matching loss;
``check_spec(spec, dim)``
    raise :class:`ConfigError` if the network does not fit the task.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .classify import ClassifyTask
from .pendulum import PendulumTask
from .synthetic import QuadraticFormTask, RosenbrockTask, SphereTask

TASKS = {
    "sphere": SphereTask,
    "rosenbrock": RosenbrockTask,
    "quadratic_form": QuadraticFormTask,
    "pendulum": PendulumTask,
    "classify": ClassifyTask,
}


def make_task(kind: str, **options):
    """Build a task from its config block (``kind`` plus task options)."""
    try:
        cls = TASKS[kind]
    except KeyError:
        raise ConfigError(f"unknown task kind {kind!r}; expected one of {sorted(TASKS)}") from None
    try:
        return cls(**options)
    except TypeError as exc:
        raise ConfigError(f"bad options for task {kind!r}: {exc}") from None


def eval_fitness(task, spec, params, mask, rng) -> float:
    """Fitness of one parameter vector under freshly drawn evaluation randomness."""
    ctx = task.draw_eval(rng)
    return float(np.asarray(task.fitness(spec, np.atleast_2d(params), mask, ctx))[0])


def test_metric(task, spec, params, mask) -> float:
    return task.test_metric(spec, params, mask)


__all__ = ["make_task", "eval_fitness", "test_metric", "TASKS", "ClassifyTask", "PendulumTask",
           "SphereTask", "RosenbrockTask", "QuadraticFormTask"]
