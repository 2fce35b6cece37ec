"""Torque-limited pendulum swing-up with an MLP policy.

The pendulum is a uniform rod of mass ``m`` and length ``l`` pivoting at
one end. The angle is measured from the upright position, so the hanging
rest state is ``angle = pi``. Dynamics (no damping)::

    angle'' = 3 g / (2 l) * sin(angle) + 3 / (m l^2) * torque

integrated with velocity Verlet over ``substeps`` sub-steps per control
step. Observation is ``(cos angle, sin angle, angular velocity)``; reward
per step is ``-(angle_normalized^2 + 0.1 * velocity^2 + 0.001 * torque^2)``.
Every episode starts near hanging with a small uniform perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..net import forward
from ..rng import stream


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


@dataclass(frozen=True)
class PendulumTask:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 10.0
    dt: float = 0.05
    substeps: int = 4
    max_torque: float = 2.0
    max_speed: float = 8.0
    horizon: int = 200
    train_episodes: int = 8
    test_episodes: int = 32
    test_seed: int = 2**31 - 1
    init_noise: float = 0.2
    kind = "pendulum"

    def check_spec(self, spec, dim: int):
        if spec is None or spec.kind != "mlp" or spec.n_inputs != 3 or spec.n_outputs != 1:
            raise ConfigError("pendulum policies must be MLPs with 3 inputs and 1 output")

    def initial_states(self, rng, n_episodes: int) -> np.ndarray:
        u = rng.uniform(-self.init_noise, self.init_noise, size=(n_episodes, 2))
        return np.stack([np.pi + u[:, 0], u[:, 1]], axis=-1)

    def energy(self, angle, velocity):
        """Mechanical energy with the potential zero at the hanging position."""
        m, l, g = self.mass, self.length, self.gravity
        return 0.5 * (m * l * l / 3.0) * velocity ** 2 + m * g * (l / 2.0) * (1.0 + np.cos(angle))

    def _accel(self, angle, torque):
        m, l, g = self.mass, self.length, self.gravity
        return 3.0 * g / (2.0 * l) * np.sin(angle) + 3.0 / (m * l * l) * torque

    def step(self, angle, velocity, torque):
        """Advance one control step; returns new (angle, velocity)."""
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            v_half = velocity + 0.5 * h * self._accel(angle, torque)
            angle = angle + h * v_half
            velocity = v_half + 0.5 * h * self._accel(angle, torque)
        return angle, np.clip(velocity, -self.max_speed, self.max_speed)

    def rollout(self, spec, params, mask, init_states, policy=None) -> np.ndarray:
        """Undiscounted returns, shape ``(n_candidates, n_episodes)``.

        ``policy`` overrides the network with a callable ``obs -> torque``.
        """
        params = np.atleast_2d(params)
        n = params.shape[0]
        angle = np.broadcast_to(init_states[:, 0], (n, init_states.shape[0])).copy()
        vel = np.broadcast_to(init_states[:, 1], angle.shape).copy()
        total = np.zeros_like(angle)
        for _ in range(self.horizon):
            obs = np.stack([np.cos(angle), np.sin(angle), vel], axis=-1)
            if policy is None:
                act = forward(spec, params, mask, obs)[..., 0]
                if spec.output_transform == "tanh":
                    act = act * self.max_torque
            else:
                act = policy(obs)
            torque = np.clip(act, -self.max_torque, self.max_torque)
            total -= angle_normalize(angle) ** 2 + 0.1 * vel ** 2 + 0.001 * torque ** 2
            angle, vel = self.step(angle, vel, torque)
        return total

    def draw_eval(self, rng):
        return self.initial_states(rng, self.train_episodes)

    def fitness(self, spec, params, mask, ctx):
        return self.rollout(spec, params, mask, ctx).mean(axis=-1)

    def test_states(self) -> np.ndarray:
        # fixed evaluation episodes from a stream the training loop never touches
        return self.initial_states(stream(self.test_seed, "test_episodes"), self.test_episodes)

    def test_metric(self, spec, params, mask) -> float:
        return float(self.rollout(spec, params, mask, self.test_states()).mean())

    def test_loss(self, spec, params, mask) -> float:
        return -self.test_metric(spec, params, mask)
