"""Maximization of the approximated likelihood and downstream inference.

Positive parameter slots are log-transformed so the search is unconstrained;
the analytic score is mapped through the chain rule.  A BFGS pass is
followed, when needed, by damped Newton steps on the score using the
finite-difference score Jacobian, until the gradient tolerance is met.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .data import Dataset
from .errors import (
    DomainError,
    DomainEscape,
    LssurvError,
    NonConvergence,
    NumericalUnderflow,
    QuadratureFailure,
    ValidationError,
)
from .likelihood import LikelihoodContext
from .models import REGISTRY_ORDER, SurvivalModel, get_model
from .variance import VarianceParts, asymptotic_variance

Z975 = 1.96


@dataclass
class FitOptions:
    grad_tol: float = 1e-6
    max_iter: int = 500
    skip_variance: bool = False


@dataclass
class FitResult:
    model_name: str
    param_names: list
    theta_hat: np.ndarray
    loglik: float
    sigma_hat: np.ndarray | None
    se: np.ndarray | None
    ci: np.ndarray | None          # (d, 2)
    converged: bool
    iterations: int
    grad_norm: float
    warnings: list = field(default_factory=list)
    n0: int = 0
    d_z: int = 0
    variance_parts: VarianceParts | None = None

    def to_json_dict(self) -> dict:
        d = len(self.theta_hat)
        return {
            "model": self.model_name,
            "params": list(self.param_names),
            "theta": [float(v) for v in self.theta_hat],
            "se": [float(v) for v in self.se] if self.se is not None else None,
            "ci": [[float(a), float(b)] for a, b in self.ci] if self.ci is not None else None,
            "loglik": float(self.loglik),
            "sigma": [float(v) for v in self.sigma_hat.ravel()] if self.sigma_hat is not None else None,
            "d_theta": d,
            "d_z": int(self.d_z),
            "n0": int(self.n0),
            "convergence": {
                "converged": bool(self.converged),
                "iterations": int(self.iterations),
                "grad_norm": float(self.grad_norm),
                "warnings": list(self.warnings),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FitResult":
        d = doc["d_theta"]
        sigma = np.array(doc["sigma"]).reshape(d, d) if doc.get("sigma") is not None else None
        conv = doc["convergence"]
        return cls(
            model_name=doc["model"],
            param_names=list(doc["params"]),
            theta_hat=np.array(doc["theta"], dtype=float),
            loglik=float(doc["loglik"]),
            sigma_hat=sigma,
            se=np.array(doc["se"], dtype=float) if doc.get("se") is not None else None,
            ci=np.array(doc["ci"], dtype=float) if doc.get("ci") is not None else None,
            converged=conv["converged"],
            iterations=conv["iterations"],
            grad_norm=conv["grad_norm"],
            warnings=list(conv["warnings"]),
            n0=int(doc.get("n0", 0)),
            d_z=int(doc.get("d_z", 0)),
        )


def _transforms(model: SurvivalModel, d_z: int):
    pos = model.positive_mask(d_z)

    def to_eta(theta):
        eta = np.array(theta, dtype=float)
        eta[pos] = np.log(eta[pos])
        return eta

    def to_theta(eta):
        theta = np.array(eta, dtype=float)
        if np.any(np.abs(theta[pos]) > 700):
            raise DomainEscape("parameter escaped to the domain boundary")
        theta[pos] = np.exp(theta[pos])
        return theta

    def jac_diag(theta):
        j = np.ones_like(theta)
        j[pos] = theta[pos]
        return j

    return to_eta, to_theta, jac_diag


def source_only_mle(model: SurvivalModel, dataset: Dataset, theta0=None) -> np.ndarray:
    """Censored maximum likelihood on the source sample alone.

    Consistent for theta when there is no shift; in general a starting
    point close enough to the basin of the full objective.
    """
    x, delta, z = dataset.x, dataset.delta, dataset.z_source
    if theta0 is None:
        theta0 = model.default_init(x, delta, z)
    to_eta, to_theta, _ = _transforms(model, dataset.d_z)
    unc = delta == 1

    big = 1e18  # finite penalty keeps the simplex arithmetic warning-free

    def nll(eta):
        try:
            theta = to_theta(eta)
            model.check_theta(theta, dataset.d_z)
            ll = float(np.sum(model.log_density(theta, x[unc], z[unc])))
            s = model.survival(theta, x[~unc], z[~unc])
            if np.any(s <= 0):
                return big
            ll += float(np.sum(np.log(s)))
        except (DomainError, DomainEscape, FloatingPointError):
            return big
        return -ll if np.isfinite(ll) else big

    res = optimize.minimize(nll, to_eta(theta0), method="Nelder-Mead",
                            options={"maxiter": 2000, "xatol": 1e-6, "fatol": 1e-8})
    try:
        theta = to_theta(res.x)
        model.check_theta(theta, dataset.d_z)
    except (DomainEscape, DomainError):
        return np.asarray(theta0, dtype=float)
    if np.max(np.abs(theta)) > 100.0:
        # a runaway source-only fit (e.g. a flat direction near an excluded
        # point) is a worse start than the crude moment initializer
        return np.asarray(theta0, dtype=float)
    return theta


def _fd_score_column(ctx, theta, j, h, d_z):
    """Central score difference along slot j, shrinking the step when a
    probe lands outside the domain (e.g. an excluded-point guard band)."""
    model = ctx.model
    for _ in range(8):
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        try:
            model.check_theta(up, d_z)
            model.check_theta(dn, d_z)
            _, su = ctx.value_and_score(up)
            _, sd = ctx.value_and_score(dn)
            return (su - sd) / (2 * h)
        except (DomainError, NumericalUnderflow):
            h *= 0.25
    raise DomainError(f"cannot difference the score along slot {j} at {theta[j]}")


def _fd_score_jacobian(ctx: LikelihoodContext, theta, pos_mask):
    d = theta.shape[0]
    d_z = ctx.dataset.d_z
    J = np.empty((d, d))
    for j in range(d):
        h = max(1e-6, 1e-5 * abs(theta[j]))
        if pos_mask[j]:
            h = min(h, 0.25 * theta[j])
        J[:, j] = _fd_score_column(ctx, theta, j, h, d_z)
    return J


def fit(model, dataset: Dataset, init="auto", opts: FitOptions | None = None) -> FitResult:
    """Maximize the approximated log-likelihood and assemble inference.

    ``model`` may be a registry name or a SurvivalModel instance;
    ``init`` is a parameter vector or ``"auto"`` (source-only MLE start).
    """
    if isinstance(model, str):
        model = get_model(model)
    opts = opts or FitOptions()
    ctx = LikelihoodContext(model, dataset)
    warnings = []
    if ctx.n_dropped:
        warnings.append(f"dropped {ctx.n_dropped} censored record(s) beyond the last event")

    if isinstance(init, str) and init == "auto":
        theta0 = source_only_mle(model, dataset)
    else:
        theta0 = model.check_theta(np.asarray(init, dtype=float), dataset.d_z)
    to_eta, to_theta, jac_diag = _transforms(model, dataset.d_z)

    def neg(eta):
        try:
            theta = to_theta(eta)
            ll, sc = ctx.value_and_score(theta)
        except (NumericalUnderflow, DomainError, DomainEscape, FloatingPointError):
            return np.inf, np.zeros_like(eta)
        return -ll, -sc * jac_diag(theta)

    def try_step(theta, sc, step):
        scale = 1.0
        for _ in range(25):
            cand = theta + scale * step
            try:
                model.check_theta(cand, dataset.d_z)
                ll_c, sc_c = ctx.value_and_score(cand)
            except (NumericalUnderflow, DomainError, LssurvError):
                scale *= 0.5
                continue
            if np.max(np.abs(sc_c)) < np.max(np.abs(sc)):
                return cand, ll_c, sc_c
            scale *= 0.5
        return None

    def polish(theta, ll, sc, budget=40):
        """Newton on the score (strict gradient-norm descent), with a
        damped-least-squares fallback for near-singular Jacobians."""
        steps = 0
        d = theta.shape[0]
        while np.max(np.abs(sc)) > opts.grad_tol and steps < budget:
            try:
                J = _fd_score_jacobian(ctx, theta, model.positive_mask(dataset.d_z))
            except DomainError:
                break
            try:
                step = np.linalg.solve(J, -sc)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(J, -sc, rcond=None)[0]
            hit = try_step(theta, sc, step)
            if hit is None:
                mu = 1e-6 * max(float(np.max(np.abs(J))), 1e-12)
                for _ in range(10):
                    step = np.linalg.solve(J.T @ J + mu * np.eye(d), -J.T @ sc)
                    hit = try_step(theta, sc, step)
                    if hit is not None:
                        break
                    mu *= 10.0
            steps += 1
            if hit is None:
                break
            theta, ll, sc = hit
        return theta, ll, sc, steps

    def attempt(method):
        res = optimize.minimize(
            neg,
            to_eta(theta0),
            jac=True,
            method=method,
            options={"gtol": 0.2 * opts.grad_tol, "maxiter": opts.max_iter},
        )
        try:
            theta = to_theta(res.x)
        except DomainEscape:
            return None, int(res.nit)
        if not np.all(np.isfinite(theta)):
            return None, int(res.nit)
        try:
            ll, sc = ctx.value_and_score(theta)
        except (NumericalUnderflow, DomainError):
            return None, int(res.nit)
        return (theta, ll, sc), int(res.nit)

    iterations = 0
    best = None
    for method in ("BFGS", "L-BFGS-B"):
        state, nit = attempt(method)
        iterations += nit
        if state is None:
            continue
        theta, ll, sc, steps = polish(*state, budget=min(40, max(opts.max_iter - iterations, 0)))
        iterations += steps
        if best is None or np.max(np.abs(sc)) < np.max(np.abs(best[2])):
            best = (theta, ll, sc)
        if np.max(np.abs(sc)) <= opts.grad_tol:
            break
    if best is None:
        raise DomainEscape("optimizer left the parameter domain from every start")
    theta, ll, sc = best
    grad_norm = float(np.max(np.abs(sc)))
    converged = grad_norm <= opts.grad_tol
    if not converged:
        raise NonConvergence(
            f"gradient sup-norm {grad_norm:.3g} above tolerance {opts.grad_tol:g} "
            f"after {iterations} iterations"
        )

    sigma = se = ci = None
    parts = None
    if not opts.skip_variance:
        sigma, parts = asymptotic_variance(model, dataset, theta)
        se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / dataset.n0)
        ci = np.stack([theta - Z975 * se, theta + Z975 * se], axis=1)
    return FitResult(
        model_name=model.name,
        param_names=model.param_names(dataset.d_z),
        theta_hat=theta,
        loglik=ll,
        sigma_hat=sigma,
        se=se,
        ci=ci,
        converged=converged,
        iterations=iterations,
        grad_norm=grad_norm,
        warnings=warnings,
        n0=dataset.n0,
        d_z=dataset.d_z,
        variance_parts=parts,
    )


def conditional_functional(model, fit_result: FitResult, z, g, points=None):
    """Plug-in estimate of E[g(T) | Z=z] in the target population with a
    delta-method standard error.

    Returns (zeta_hat, se, ci).  ``points`` marks integrand breakpoints
    (indicator or kink locations) to split the quadrature at.
    """
    if isinstance(model, str):
        model = get_model(model)
    theta = fit_result.theta_hat
    z = np.asarray(z, dtype=float)
    d = theta.shape[0]

    def integrand(t):
        return g(t) * float(np.exp(model.log_density(theta, t, z)))

    def quad_full(f):
        total = 0.0
        err = 0.0
        edges = [0.0] + sorted(float(p) for p in (points or [])) + [np.inf]
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(f, a, b, limit=200)
            total += val
            err += e
        return total, err

    try:
        zeta, err = quad_full(integrand)
    except Exception as exc:
        raise QuadratureFailure(str(exc)) from exc
    if not math.isfinite(zeta) or err > 1e-6 * max(1.0, abs(zeta)):
        raise QuadratureFailure(f"integral error estimate {err:.3g}")

    gamma = np.empty(d)
    for s in range(d):
        def comp(t, s=s):
            lq = float(np.exp(model.log_density(theta, t, z)))
            gr = model.log_density_grad(theta, t, z)
            return g(t) * lq * float(np.asarray(gr).reshape(-1, d)[0, s])

        val, e = quad_full(comp)
        if not math.isfinite(val):
            raise QuadratureFailure("gradient integral diverged")
        gamma[s] = val
    if fit_result.sigma_hat is None:
        raise ValidationError("fit result carries no covariance; rerun without skip_variance")
    var = float(gamma @ fit_result.sigma_hat @ gamma) / fit_result.n0
    se = math.sqrt(max(var, 0.0))
    return zeta, se, (zeta - Z975 * se, zeta + Z975 * se)


def bic_criterion(loglik_sum: float, n_total: int, d_theta: int) -> float:
    """-2 * summed log-likelihood + log(n) * d, the relative selection score."""
    return -2.0 * loglik_sum + math.log(n_total) * d_theta


@dataclass
class SelectionReport:
    criteria: dict
    chosen: str
    split_seed: int | None
    split_frac: float
    inference_source_idx: np.ndarray
    inference_target_idx: np.ndarray
    warnings: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "criteria": {k: (None if v is None else float(v)) for k, v in self.criteria.items()},
            "chosen": self.chosen,
            "split_seed": self.split_seed,
            "split_frac": self.split_frac,
            "inference_source_idx": [int(i) for i in self.inference_source_idx],
            "inference_target_idx": [int(i) for i in self.inference_target_idx],
            "warnings": list(self.warnings),
        }


def bic_select(models, dataset: Dataset, split_frac: float = 0.2, seed=None) -> SelectionReport:
    """Split-sample model selection.

    Source and target rows are split independently; each candidate is fit on
    the selection part and scored by ``bic_criterion`` with n equal to the
    selection-part total size.  Ties keep registry order; failed fits are
    excluded and recorded.
    """
    models = [get_model(m) if isinstance(m, str) else m for m in models]
    if len(models) < 2:
        raise ValidationError("need at least two candidate models")
    rng = np.random.default_rng(seed)
    n1, n2 = dataset.n1, dataset.n2
    n1_sel = max(int(round(split_frac * n1)), 2)
    n2_sel = max(int(round(split_frac * n2)), 1)
    perm1 = rng.permutation(n1)
    perm2 = rng.permutation(n2)
    sel1, inf1 = np.sort(perm1[:n1_sel]), np.sort(perm1[n1_sel:])
    sel2, inf2 = np.sort(perm2[:n2_sel]), np.sort(perm2[n2_sel:])
    if dataset.delta[sel1].sum() < 2 or dataset.delta[inf1].sum() < 2:
        raise ValidationError("split leaves fewer than 2 source events in a part")
    sel_data = dataset.take(sel1, sel2)
    n_sel_total = n1_sel + n2_sel

    criteria = {}
    warnings = []
    for m in models:
        try:
            fr = fit(m, sel_data, opts=FitOptions(skip_variance=True))
            criteria[m.name] = bic_criterion(fr.loglik * n1_sel, n_sel_total, m.d_theta(dataset.d_z))
        except LssurvError as exc:
            criteria[m.name] = None
            warnings.append(f"{m.name}: {exc}")
    valid = {k: v for k, v in criteria.items() if v is not None}
    if not valid:
        raise NonConvergence("every candidate model failed to fit")
    best = min(valid.values())
    ordering = REGISTRY_ORDER + [m.name for m in models if m.name not in REGISTRY_ORDER]
    chosen = next(name for name in ordering if valid.get(name) == best)
    return SelectionReport(
        criteria=criteria,
        chosen=chosen,
        split_seed=seed if isinstance(seed, int) else None,
        split_frac=split_frac,
        inference_source_idx=inf1,
        inference_target_idx=inf2,
        warnings=warnings,
    )
