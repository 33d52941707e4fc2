"""Planar redundant-arm reaching task with an obstacle between base and goals.

A 3-link arm (3 joints, 2-D workspace) must place its end effector on a goal
sampled from an arc behind a disc obstacle. The return is the negative sum of
the end-effector distance to the goal and a smooth hinge clearance cost over
points sampled along the links, so elbow-up and elbow-down postures form
separate modes of the return surface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import FeatureMap, InvalidInputError, grid_feature_map
from .base import Environment

__all__ = ["ArmTask", "arm_fk", "arm_points", "arm_return", "ArmEnv"]


@dataclass(frozen=True)
class ArmTask:
    link_lengths: tuple[float, ...] = (1.2, 1.0, 0.8)
    joint_low: float = -2.9
    joint_high: float = 2.9
    obstacle_center: tuple[float, float] = (1.4, 0.0)
    obstacle_radius: float = 0.3
    clearance: float = 0.15
    c_obs: float = 30.0
    goal_radius: float = 2.3
    goal_angle_low: float = -0.3
    goal_angle_high: float = 0.3
    samples_per_link: int = 6

    def __post_init__(self):
        if self.goal_radius >= sum(self.link_lengths):
            raise InvalidInputError("goal arc must be reachable")
        if self.samples_per_link < 2:
            raise InvalidInputError("need at least 2 clearance samples per link")


def _clamp_joints(q, task: ArmTask):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(task.link_lengths),):
        raise InvalidInputError(f"expected {len(task.link_lengths)} joint angles")
    clipped = np.clip(q, task.joint_low, task.joint_high)
    return clipped, bool(np.any(clipped != q))


def _joint_positions(q, task: ArmTask):
    angles = np.cumsum(q)
    steps = np.stack([np.cos(angles), np.sin(angles)], axis=1) * np.asarray(task.link_lengths)[:, None]
    return np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])  # (n_links + 1, 2)


def arm_fk(q, task: ArmTask):
    """End-effector position; joint angles outside the limits are clamped."""
    qc, clamped = _clamp_joints(q, task)
    pos = _joint_positions(qc, task)[-1]
    return pos, clamped


def arm_points(q, task: ArmTask) -> np.ndarray:
    """Points sampled uniformly along every link, for clearance costs."""
    qc, _ = _clamp_joints(q, task)
    joints = _joint_positions(qc, task)
    frac = np.linspace(0.0, 1.0, task.samples_per_link)[1:]  # skip shared joint point
    pts = [joints[0:1]]
    for i in range(len(task.link_lengths)):
        seg = joints[i] + frac[:, None] * (joints[i + 1] - joints[i])
        pts.append(seg)
    return np.vstack(pts)


def arm_return(q, goal, task: ArmTask):
    """R = -(distance to goal) - (clearance cost); 0 is the best possible."""
    goal = np.asarray(goal, dtype=np.float64)
    ee, clamped = arm_fk(q, task)
    d = float(np.linalg.norm(ee - goal))
    pts = arm_points(q, task)
    sd = np.linalg.norm(pts - np.asarray(task.obstacle_center), axis=1) - task.obstacle_radius
    hinge = np.maximum(0.0, task.clearance - sd)
    c = task.c_obs * float(np.sum(hinge**2))
    return -d - c, {"distance": d, "collision_cost": c, "clamped": clamped}


class ArmEnv(Environment):
    name = "arm"

    def __init__(self, task: ArmTask | None = None, param_bound: float = 2.2):
        self.task = task if task is not None else ArmTask()
        t = self.task
        lo = min(t.goal_radius * np.cos(t.goal_angle_low), t.goal_radius * np.cos(t.goal_angle_high))
        ylo = t.goal_radius * np.sin(t.goal_angle_low)
        yhi = t.goal_radius * np.sin(t.goal_angle_high)
        n = len(t.link_lengths)
        super().__init__(
            [lo - 1e-6, ylo], [t.goal_radius + 1e-6, yhi],
            [-param_bound] * n, [param_bound] * n,
        )

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        t = self.task
        a = rng.uniform(t.goal_angle_low, t.goal_angle_high)
        return t.goal_radius * np.array([np.cos(a), np.sin(a)])

    def evaluate(self, s, xi):
        return arm_return(xi, s, self.task)

    def default_feature_map(self) -> FeatureMap:
        return grid_feature_map(self.context_low, self.context_high, per_dim=5)
