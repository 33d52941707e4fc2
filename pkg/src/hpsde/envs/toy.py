"""Multi-modal toy return surfaces with 1-D context and 1-D parameter.

Each mode is a Gaussian ridge whose peak parameter follows a linear track
xi*(s) = center_xi + slope * (s - center_s); with slope 0 this reduces to an
axis-aligned Gaussian bump. Opposing slopes make the two-mode surface
impossible to cover with one linear-mean policy: averaging the tracks lands
in the low-return valley between them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import FeatureMap, InvalidInputError
from .base import Environment

__all__ = [
    "ToyMode",
    "ToyModeSpec",
    "toy_return",
    "mode_tracks",
    "two_mode_spec",
    "three_mode_spec",
    "grid_optimal_expected_return",
    "ToyEnv",
]


@dataclass(frozen=True)
class ToyMode:
    center_s: float
    center_xi: float
    sigma_s: float
    sigma_xi: float
    height: float
    slope: float = 0.0

    def __post_init__(self):
        if self.sigma_s <= 0 or self.sigma_xi <= 0:
            raise InvalidInputError("mode scales must be positive")
        if self.height <= 0:
            raise InvalidInputError("mode height must be positive")


@dataclass(frozen=True)
class ToyModeSpec:
    modes: tuple[ToyMode, ...]
    floor: float = 0.0
    s_low: float = -1.0
    s_high: float = 1.0
    xi_low: float = -2.0
    xi_high: float = 2.0

    def __post_init__(self):
        for m in self.modes:
            if not (self.s_low <= m.center_s <= self.s_high):
                raise InvalidInputError("mode context center outside the context box")
            if not (self.xi_low <= m.center_xi <= self.xi_high):
                raise InvalidInputError("mode parameter center outside the parameter box")


def toy_return(s, xi, spec: ToyModeSpec):
    """floor + sum of Gaussian ridges; broadcasts over array inputs."""
    s = np.asarray(s, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    total = np.zeros(np.broadcast(s, xi).shape)
    for m in spec.modes:
        track = m.center_xi + m.slope * (s - m.center_s)
        total = total + m.height * np.exp(
            -((s - m.center_s) ** 2) / (2.0 * m.sigma_s**2)
            - ((xi - track) ** 2) / (2.0 * m.sigma_xi**2)
        )
    out = spec.floor + total
    return float(out) if out.ndim == 0 else out


def mode_tracks(spec: ToyModeSpec, s) -> np.ndarray:
    """Peak parameter of each mode at context s: shape (n_modes,) or (n_modes, len(s))."""
    s = np.asarray(s, dtype=np.float64)
    return np.stack([m.center_xi + m.slope * (s - m.center_s) for m in spec.modes])


def two_mode_spec() -> ToyModeSpec:
    """Two equal ridges whose tracks slope apart; averaging them hits the valley."""
    return ToyModeSpec(
        modes=(
            ToyMode(center_s=0.0, center_xi=1.0, sigma_s=0.7, sigma_xi=0.25, height=1.0, slope=0.4),
            ToyMode(center_s=0.0, center_xi=-1.0, sigma_s=0.7, sigma_xi=0.25, height=1.0, slope=-0.4),
        ),
    )


def three_mode_spec() -> ToyModeSpec:
    """Two sloped outer modes plus a slightly lower flat mode between them."""
    return ToyModeSpec(
        modes=(
            ToyMode(center_s=0.0, center_xi=2.0, sigma_s=0.7, sigma_xi=0.25, height=1.0, slope=0.4),
            ToyMode(center_s=0.0, center_xi=0.0, sigma_s=0.7, sigma_xi=0.25, height=0.85, slope=0.0),
            ToyMode(center_s=0.0, center_xi=-2.0, sigma_s=0.7, sigma_xi=0.25, height=1.0, slope=-0.4),
        ),
        xi_low=-3.0,
        xi_high=3.0,
    )


def grid_optimal_expected_return(spec: ToyModeSpec, n_s: int = 201, n_xi: int = 1001) -> float:
    """E_s[max_xi R(s, xi)] by dense enumeration over both axes."""
    s_grid = np.linspace(spec.s_low, spec.s_high, n_s)
    xi_grid = np.linspace(spec.xi_low, spec.xi_high, n_xi)
    R = toy_return(s_grid[:, None], xi_grid[None, :], spec)
    return float(R.max(axis=1).mean())


class ToyEnv(Environment):
    def __init__(self, spec: ToyModeSpec, name: str):
        super().__init__([spec.s_low], [spec.s_high], [spec.xi_low], [spec.xi_high])
        self.spec = spec
        self.name = name

    def evaluate(self, s, xi):
        r = toy_return(float(np.atleast_1d(s)[0]), float(np.atleast_1d(xi)[0]), self.spec)
        return float(r), {}

    def default_feature_map(self) -> FeatureMap:
        # a linear policy mean is expressive enough for linear mode tracks
        return FeatureMap("linear", in_dim=1)
