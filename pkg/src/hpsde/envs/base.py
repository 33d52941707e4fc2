"""Benchmark environment interface."""
from __future__ import annotations

import numpy as np

from ..core import FeatureMap, InvalidInputError, grid_feature_map


class Environment:
    """One episodic task: a context distribution and a return evaluator.

    ``evaluate`` must be pure and deterministic in (s, xi) so rollouts can be
    fanned out to worker threads. ``param_low``/``param_high`` bound the
    uniform sampler that plays the role of the initial random policy.
    """

    name: str = "base"

    def __init__(self, context_low, context_high, param_low, param_high):
        self.context_low = np.atleast_1d(np.asarray(context_low, dtype=np.float64))
        self.context_high = np.atleast_1d(np.asarray(context_high, dtype=np.float64))
        self.param_low = np.atleast_1d(np.asarray(param_low, dtype=np.float64))
        self.param_high = np.atleast_1d(np.asarray(param_high, dtype=np.float64))
        if np.any(self.context_high <= self.context_low):
            raise InvalidInputError("context box must have positive extent")
        if np.any(self.param_high <= self.param_low):
            raise InvalidInputError("parameter box must have positive extent")

    @property
    def context_dim(self) -> int:
        return len(self.context_low)

    @property
    def param_dim(self) -> int:
        return len(self.param_low)

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.context_low, self.context_high)

    def sample_initial_param(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.param_low, self.param_high)

    def initial_param_density(self) -> float:
        """Density of the uniform initial policy over the parameter box."""
        return float(1.0 / np.prod(self.param_high - self.param_low))

    def evaluate(self, s, xi):
        raise NotImplementedError

    def default_feature_map(self) -> FeatureMap:
        """Squared-exponential grid features unless a task overrides this."""
        return grid_feature_map(self.context_low, self.context_high, per_dim=10)
