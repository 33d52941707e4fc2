"""Benchmark environments and the name registry used by the harness."""
from __future__ import annotations

from dataclasses import replace

from ..core import InvalidInputError
from .arm import ArmEnv, ArmTask, arm_fk, arm_points, arm_return
from .base import Environment
from .dmp import DmpParams, basis_centers, dmp_rollout
from .puddle import PuddleEnv, PuddleLayout, PuddleRect, default_puddle_layout, puddle_return
from .toy import (
    ToyEnv,
    ToyMode,
    ToyModeSpec,
    grid_optimal_expected_return,
    mode_tracks,
    three_mode_spec,
    toy_return,
    two_mode_spec,
)

__all__ = [
    "Environment", "make_env", "ENV_NAMES",
    "ToyEnv", "ToyMode", "ToyModeSpec", "toy_return", "mode_tracks",
    "two_mode_spec", "three_mode_spec", "grid_optimal_expected_return",
    "DmpParams", "dmp_rollout", "basis_centers",
    "PuddleEnv", "PuddleLayout", "PuddleRect", "default_puddle_layout", "puddle_return",
    "ArmEnv", "ArmTask", "arm_fk", "arm_points", "arm_return",
]

ENV_NAMES = ("toy2", "toy3", "puddle", "arm")


def make_env(name: str, overrides: dict | None = None) -> Environment:
    """Build a benchmark environment by name.

    ``overrides`` holds flat constant replacements from the config file:
    fields of the toy mode spec, puddle layout or arm task, plus
    ``param_bound`` for puddle and arm. Unknown names raise InvalidInputError.
    """
    kw = dict(overrides or {})
    try:
        if name in ("toy2", "toy3"):
            spec = two_mode_spec() if name == "toy2" else three_mode_spec()
            if kw:
                spec = replace(spec, **kw)
            return ToyEnv(spec, name)
        if name == "puddle":
            param_bound = kw.pop("param_bound", 50.0)
            rects = kw.pop("rects", None)
            layout = default_puddle_layout()
            if rects is not None:
                kw["rects"] = tuple(PuddleRect(*r) for r in rects)
            if kw:
                layout = replace(layout, **kw)
            return PuddleEnv(layout, param_bound=param_bound)
        if name == "arm":
            param_bound = kw.pop("param_bound", 2.2)
            task = ArmTask(**kw) if kw else ArmTask()
            return ArmEnv(task, param_bound=param_bound)
    except TypeError as e:
        raise InvalidInputError(f"bad override for environment {name!r}: {e}") from e
    raise InvalidInputError(f"unknown environment {name!r}; known: {', '.join(ENV_NAMES)}")
