"""Planar puddle-crossing task with DMP-parameterized trajectories.

The agent plans a path from a fixed start to a goal on the vertical line
x = goal_x. The x coordinate sweeps linearly; the y coordinate follows a
DMP whose goal is the context and whose basis weights are the trajectory
parameter. Time spent inside any puddle rectangle, path length and the final
goal gap are penalized, so short collision-free paths score best. The
staggered layout admits more than one homotopy class of good paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import FeatureMap, InvalidInputError, grid_feature_map
from .base import Environment
from .dmp import DmpParams, dmp_rollout

__all__ = ["PuddleRect", "PuddleLayout", "default_puddle_layout", "puddle_return", "PuddleEnv"]


@dataclass(frozen=True)
class PuddleRect:
    x0: float
    x1: float
    y0: float
    y1: float
    density: float = 1.0

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise InvalidInputError("puddle rectangle must have positive extent")
        if self.density <= 0:
            raise InvalidInputError("puddle density must be positive")

    def contains(self, xs, ys):
        return (xs >= self.x0) & (xs <= self.x1) & (ys >= self.y0) & (ys <= self.y1)


@dataclass(frozen=True)
class PuddleLayout:
    rects: tuple[PuddleRect, ...]
    start: tuple[float, float] = (0.0, 0.0)
    goal_x: float = 6.0
    goal_low: float = 2.2
    goal_high: float = 3.8
    c_pud: float = 120.0
    c_len: float = 1.0
    c_goal: float = 5.0
    duration: float = 1.0
    dt: float = 0.005
    n_basis: int = 10
    # slower phase decay than the primitive's default keeps forcing authority
    # alive mid-trajectory, where the puddles are
    alpha_x: float = 2.0


def default_puddle_layout() -> PuddleLayout:
    """A thin, tall wall with one channel above it and one below.

    Every smooth direct path crosses the wall, and because the wall is thin
    the crossing cost is nearly flat in the crossing height: partial dodges
    gain nothing, so the crossing basin is a genuine local optimum. Good
    paths commit to the over- or under-channel; a policy that averages
    samples from both channels lands back on the wall.
    """
    return PuddleLayout(
        rects=(
            PuddleRect(2.9, 3.1, 2.2, 3.1),
            PuddleRect(2.9, 3.1, 4.1, 6.1),
            PuddleRect(2.9, 3.1, 0.2, 1.2),
        )
    )


def puddle_return(s: float, xi, layout: PuddleLayout):
    """Return of the trajectory whose y-DMP weights are ``xi`` and goal is ``s``."""
    goal_y = float(np.atleast_1d(s)[0])
    w = np.asarray(xi, dtype=np.float64)
    if w.shape != (layout.n_basis,):
        raise InvalidInputError(f"expected {layout.n_basis} basis weights, got {w.shape}")
    ys, _ = dmp_rollout(
        DmpParams(weights=w, y0=layout.start[1], goal=goal_y,
                  duration=layout.duration, dt=layout.dt, alpha_x=layout.alpha_x)
    )
    xs = np.linspace(layout.start[0], layout.goal_x, len(ys))

    puddle_time = 0.0
    for rect in layout.rects:
        puddle_time += rect.density * layout.dt * float(np.count_nonzero(rect.contains(xs, ys)))
    path_len = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
    goal_gap = abs(float(ys[-1]) - goal_y)
    r = -layout.c_pud * puddle_time - layout.c_len * path_len - layout.c_goal * goal_gap
    return r, {"xs": xs, "ys": ys, "puddle_time": puddle_time,
               "path_len": path_len, "goal_gap": goal_gap}


class PuddleEnv(Environment):
    name = "puddle"

    def __init__(self, layout: PuddleLayout | None = None, param_bound: float = 150.0):
        self.layout = layout if layout is not None else default_puddle_layout()
        nb = self.layout.n_basis
        super().__init__(
            [self.layout.goal_low], [self.layout.goal_high],
            [-param_bound] * nb, [param_bound] * nb,
        )

    def evaluate(self, s, xi):
        return puddle_return(s, xi, self.layout)

    def default_feature_map(self) -> FeatureMap:
        # channel-following weights vary slowly with the goal (the primitive
        # itself adapts to the goal), so a coarse grid conditions the
        # per-option regressions much better than a fine one
        return grid_feature_map(self.context_low, self.context_high, per_dim=5)
