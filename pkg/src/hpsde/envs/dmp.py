"""Discrete dynamic movement primitive integrated with explicit Euler steps.

A critically damped point attractor pulls y toward the goal while a phase
variable x decays exponentially; the learnable forcing term is a normalized
radial-basis mix scaled by x * (goal - y0), so it vanishes at the end of the
motion and the attractor guarantees goal convergence for any weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import InvalidInputError

__all__ = ["DmpParams", "dmp_rollout", "basis_centers"]


@dataclass(frozen=True)
class DmpParams:
    weights: np.ndarray
    y0: float
    goal: float
    duration: float = 1.0
    dt: float = 0.01
    alpha_z: float = 25.0
    beta_z: float = 6.25
    alpha_x: float = 8.0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1 or len(w) < 1 or not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be a finite 1-D vector")
        if self.dt <= 0 or self.duration <= 0:
            raise InvalidInputError("dt and duration must be positive")
        if abs(self.beta_z - self.alpha_z / 4.0) > 1e-9:
            raise InvalidInputError("critical damping requires beta_z = alpha_z / 4")
        object.__setattr__(self, "weights", w)


def basis_centers(n_basis: int, alpha_x: float):
    """Centers placed at the phase values of equally spaced times, plus widths."""
    c = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    h = n_basis**1.5 / c / alpha_x
    return c, h


_PHASE_CACHE: dict = {}


def _phase_tables(n_steps: int, nb: int, alpha_x: float):
    """Phase values and normalized basis activations, cached per configuration.

    The phase recursion x_{t+1} = x_t (1 - dt alpha_x / tau) depends on t only
    through dt / tau = 1 / n_steps, so one table serves every duration.
    """
    key = (n_steps, nb, alpha_x)
    hit = _PHASE_CACHE.get(key)
    if hit is not None:
        return hit
    c, h = basis_centers(nb, alpha_x)
    xs = np.empty(n_steps)
    x = 1.0
    decay = 1.0 - alpha_x / n_steps
    for t in range(n_steps):
        xs[t] = x
        x *= decay
    psi = np.exp(-h[None, :] * (xs[:, None] - c[None, :]) ** 2)
    basis = psi / (psi.sum(axis=1, keepdims=True) + 1e-300)
    _PHASE_CACHE[key] = (xs, basis)
    return xs, basis


def dmp_rollout(p: DmpParams):
    """Integrate the primitive; returns positions y(t) and velocities yd(t).

    Both arrays have round(duration / dt) + 1 entries including t = 0.
    """
    n_steps = int(round(p.duration / p.dt))
    tau = p.duration
    amplitude = p.goal - p.y0
    xs, basis = _phase_tables(n_steps, len(p.weights), p.alpha_x)
    forces = (basis @ p.weights) * xs * amplitude

    y = p.y0
    z = 0.0
    ys = np.empty(n_steps + 1)
    yds = np.empty(n_steps + 1)
    ys[0] = y
    yds[0] = 0.0
    dt_tau = p.dt / tau
    for t in range(n_steps):
        y_new = y + dt_tau * z
        z_new = z + dt_tau * (p.alpha_z * (p.beta_z * (p.goal - y) - z) + forces[t])
        y, z = y_new, z_new
        ys[t + 1] = y
        yds[t + 1] = z / tau
    return ys, yds
