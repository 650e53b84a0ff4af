"""Piecewise-constant functions and discrete measures on the time axis.

These are the elementary containers behind the product-limit CDF, its
survival complement, the jump measure, the at-risk fraction and the
censoring-compensator machinery.  Knot equality is exact float equality:
no epsilon merging is performed, so jump bookkeeping is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StepFunction:
    """A piecewise-constant function with finitely many knots.

    ``side='right'`` means the function is right-continuous: ``f(t)`` equals
    ``values[k]`` for ``knots[k] <= t < knots[k+1]`` and ``pre`` before the
    first knot.  ``side='left'`` gives the left-continuous convention where
    the knot point itself still takes the previous level.
    """

    knots: np.ndarray
    values: np.ndarray
    pre: float = 0.0
    side: str = "right"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or values.shape != knots.shape:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if knots.size and np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.side not in ("right", "left"):
            raise ValueError("side must be 'right' or 'left'")
        knots.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        return step_eval(self, t)


def step_eval(f: StepFunction, t):
    """Evaluate ``f`` at ``t`` (scalar or array) honouring its continuity side."""
    t_arr = np.asarray(t, dtype=float)
    if f.knots.size == 0:
        out = np.full(t_arr.shape, f.pre)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out
    idx = np.searchsorted(f.knots, t_arr, side="right" if f.side == "right" else "left")
    out = np.where(idx == 0, f.pre, f.values[np.maximum(idx - 1, 0)])
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


def jump_at(f: StepFunction, t) -> float:
    """Return ``f(t) - f(t-)``; zero when ``t`` is not a knot.

    For a left-continuous function the value at a knot equals the left
    limit, so the jump there is zero by construction.
    """
    t = float(t)
    k = np.searchsorted(f.knots, t)
    if k >= f.knots.size or f.knots[k] != t:
        return 0.0
    if f.side == "left":
        return 0.0
    left = f.pre if k == 0 else float(f.values[k - 1])
    return float(f.values[k]) - left


@dataclass(frozen=True)
class DiscreteMeasure:
    """Non-negative point masses at arbitrary locations.

    Locations may be scalars (times) or vectors (covariate points); masses
    must be non-negative and total at most ``1 + 1e-12``.
    """

    locations: np.ndarray
    masses: np.ndarray
    _total: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or locations.shape[0] != masses.shape[0]:
            raise ValueError("locations and masses must agree on the first axis")
        if np.any(masses < 0):
            raise ValueError("masses must be non-negative")
        total = float(masses.sum())
        if total > 1.0 + 1e-12:
            raise ValueError(f"total mass {total} exceeds 1")
        locations.flags.writeable = False
        masses.flags.writeable = False
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "_total", total)

    @property
    def total_mass(self) -> float:
        return self._total

    def __len__(self) -> int:
        return int(self.masses.shape[0])
