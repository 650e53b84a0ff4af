"""Bootstrap check of the shared-conditional-covariate assumption.

Requires (possibly censored) responses in BOTH populations, so it is a
pre-deployment validation tool, not part of the estimator itself.  The
discrepancy compares, between populations, the smoothed conditional CDF of
the covariates given the response,

    R(z, t) = d/dt P_{Z,T}(z, t) / (d/dt P_T(t)),

with the joint CDF estimated by product-limit jump weights on the event
records, the time derivative by a Gaussian kernel, and the covariate
indicator by a product of Gaussian CDFs.  The double integral over (z, t)
is replaced by an equal-weight average over the pooled observed event
points, which keeps the statistic well-defined for multivariate z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateBandwidth, NoEvents, ValidationError
from .nonparam import kaplan_meier

_DENOM_FLOOR = 1e-10


def stute_masses(x, delta) -> np.ndarray:
    """Per-record jump share of the product-limit CDF: the jump at each
    event time split equally over tied events; censored records carry zero."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta)
    km = kaplan_meier(x, delta)
    masses = np.zeros(x.shape[0])
    unc = delta == 1
    k = np.searchsorted(km.event_times, x[unc])
    masses[unc] = km.jumps.masses[k] / km.event_counts[k]
    return masses


def stute_joint_cdf(x, delta, z):
    """Weighted joint measure over (z, t): atoms at the uncensored records.

    Returns (z_atoms, t_atoms, masses); total mass equals the product-limit
    CDF at the largest observation.
    """
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[0] != x.shape[0]:
        z = z.T
    if not np.any(delta == 1):
        raise NoEvents("all records censored")
    masses = stute_masses(x, delta)
    unc = delta == 1
    return z[unc], x[unc], masses[unc]


def silverman_bandwidths(z_atoms, t_atoms) -> tuple:
    """Rule-of-thumb bandwidth per coordinate on the given points."""
    m = t_atoms.shape[0]
    factor = 0.9 * m ** (-0.2)

    def one(col):
        sd = float(np.std(col))
        iqr = float(np.subtract(*np.percentile(col, [75, 25])))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        return factor * spread

    h_z = np.array([one(z_atoms[:, j]) for j in range(z_atoms.shape[1])])
    h_t = one(t_atoms)
    return h_z, h_t


@dataclass
class RatioEstimate:
    grid_z: np.ndarray
    grid_t: np.ndarray
    values: np.ndarray
    bandwidth_z: np.ndarray
    bandwidth_t: float


def _ratio_values(z_atoms, t_atoms, masses, grid_z, grid_t, h_z, h_t):
    # time kernel (G, m) shared by numerator and denominator
    kt = np.exp(-0.5 * ((grid_t[:, None] - t_atoms[None, :]) / h_t) ** 2)
    denom = kt @ masses
    num_w = kt.copy()
    for j in range(z_atoms.shape[1]):
        num_w *= special.ndtr((grid_z[:, j][:, None] - z_atoms[None, :, j]) / h_z[j])
    num = num_w @ masses
    return num / np.maximum(denom, _DENOM_FLOOR * h_t * math.sqrt(2 * math.pi))


def ratio_estimate(x, delta, z, bandwidths="auto", grid=None) -> RatioEstimate:
    """Smoothed conditional covariate CDF given the response, on a grid of
    (z, t) points.  ``bandwidths`` is "auto" (rule of thumb on the event
    atoms) or a pair (h_z_vector, h_t).
    """
    z_atoms, t_atoms, masses = stute_joint_cdf(x, delta, z)
    if grid is None:
        grid_z, grid_t = z_atoms, t_atoms
    else:
        grid_z, grid_t = grid
        grid_z = np.atleast_2d(np.asarray(grid_z, dtype=float))
        grid_t = np.asarray(grid_t, dtype=float)
    if isinstance(bandwidths, str) and bandwidths == "auto":
        h_z, h_t = silverman_bandwidths(z_atoms, t_atoms)
    else:
        h_z, h_t = np.asarray(bandwidths[0], dtype=float), float(bandwidths[1])
    if h_t <= 0 or np.any(h_z <= 0):
        raise DegenerateBandwidth(f"bandwidths h_z={h_z}, h_t={h_t}")
    values = _ratio_values(z_atoms, t_atoms, masses, grid_z, grid_t, h_z, h_t)
    return RatioEstimate(
        grid_z=grid_z, grid_t=grid_t, values=values, bandwidth_z=h_z, bandwidth_t=h_t
    )


@dataclass
class ShiftTestResult:
    t_n: float
    critical_value: float
    p_value: float
    reject: bool
    K: int
    alpha: float
    seed: int | None

    def to_json_dict(self) -> dict:
        return {
            "t_n": float(self.t_n),
            "critical_value": float(self.critical_value),
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "K": int(self.K),
            "alpha": float(self.alpha),
            "seed": self.seed,
        }


class _PopKernels:
    """Per-population machinery reused across bootstrap replicates: kernels
    are evaluated once at the original record values, and a resample only
    reweights the columns."""

    def __init__(self, x, delta, z, grid_z, grid_t, h_z, h_t):
        self.x = np.asarray(x, dtype=float)
        self.delta = np.asarray(delta)
        self.z = np.atleast_2d(np.asarray(z, dtype=float))
        self.n = self.x.shape[0]
        kt = np.exp(-0.5 * ((grid_t[:, None] - self.x[None, :]) / h_t) ** 2)
        num_w = kt.copy()
        for j in range(self.z.shape[1]):
            num_w *= special.ndtr((grid_z[:, j][:, None] - self.z[None, :, j]) / h_z[j])
        self.kt = kt
        self.num_w = num_w
        self.floor = _DENOM_FLOOR * h_t * math.sqrt(2 * math.pi)

    def ratio(self, record_masses) -> np.ndarray:
        denom = self.kt @ record_masses
        return (self.num_w @ record_masses) / np.maximum(denom, self.floor)

    def original_masses(self) -> np.ndarray:
        return stute_masses(self.x, self.delta)

    def bootstrap_masses(self, rng) -> np.ndarray:
        for _ in range(100):
            idx = rng.integers(0, self.n, size=self.n)
            if np.any(self.delta[idx] == 1):
                break
        masses = stute_masses(self.x[idx], self.delta[idx])
        agg = np.zeros(self.n)
        np.add.at(agg, idx, masses)
        return agg


def label_shift_test(
    pop_p, pop_q, K: int = 200, alpha: float = 0.05, seed=None, bandwidths=None
) -> ShiftTestResult:
    """Bootstrap test of equality of the two conditional covariate laws.

    ``pop_p`` and ``pop_q`` are (x, delta, z) triples of censored samples.
    The critical value is the (1 - alpha) quantile of the recentred
    bootstrap statistics T*_n - T_n.  ``bandwidths`` overrides the pooled
    rule-of-thumb choice with a fixed (h_z, h_t) pair.
    """
    if K < 50:
        raise ValidationError("bootstrap needs K >= 50 replicates")
    xp, dp, zp = (np.asarray(a) for a in pop_p)
    xq, dq, zq = (np.asarray(a) for a in pop_q)
    zp = np.atleast_2d(zp.astype(float))
    zq = np.atleast_2d(zq.astype(float))
    if zp.shape[0] != xp.shape[0]:
        zp = zp.T
    if zq.shape[0] != xq.shape[0]:
        zq = zq.T
    if zp.shape[1] != zq.shape[1]:
        raise ValidationError("populations disagree on covariate dimension")

    za_p, ta_p, _ = stute_joint_cdf(xp, dp, zp)
    za_q, ta_q, _ = stute_joint_cdf(xq, dq, zq)
    grid_z = np.vstack([za_p, za_q])
    grid_t = np.concatenate([ta_p, ta_q])
    if bandwidths is None:
        h_z, h_t = silverman_bandwidths(grid_z, grid_t)
    else:
        h_z, h_t = np.asarray(bandwidths[0], dtype=float), float(bandwidths[1])
    if h_t <= 0 or np.any(h_z <= 0):
        raise DegenerateBandwidth(f"bandwidths h_z={h_z}, h_t={h_t}")

    kp = _PopKernels(xp, dp, zp, grid_z, grid_t, h_z, h_t)
    kq = _PopKernels(xq, dq, zq, grid_z, grid_t, h_z, h_t)
    t_n = float(np.mean((kp.ratio(kp.original_masses()) - kq.ratio(kq.original_masses())) ** 2))

    seed_eff = seed if seed is not None else int(np.random.default_rng().integers(2**62))
    t_star = np.empty(K)
    for k in range(K):
        rk = np.random.default_rng(np.random.SeedSequence((seed_eff, k)))
        rp = kp.ratio(kp.bootstrap_masses(rk))
        rq = kq.ratio(kq.bootstrap_masses(rk))
        t_star[k] = np.mean((rp - rq) ** 2)
    recentred = t_star - t_n
    critical = float(np.quantile(recentred, 1.0 - alpha))
    p_value = float(np.mean(recentred >= t_n))
    return ShiftTestResult(
        t_n=t_n,
        critical_value=critical,
        p_value=p_value,
        reject=bool(t_n > critical),
        K=K,
        alpha=alpha,
        seed=seed if isinstance(seed, int) else None,
    )
