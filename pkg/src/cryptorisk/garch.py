"""ARMA(1,1)-GARCH(1,1) calibration, filtering, forecasting and simulation.

Model for a single return series::

    r_t   = mu_t + a_t
    mu_t  = phi0 + phi1 * r_{t-1} + theta1 * a_{t-1}
    a_t   = sigma_t * eps_t
    s2_t  = alpha0 + alpha1 * a_{t-1}**2 + beta1 * s2_{t-1}

with ``eps_t`` zero-mean, unit-variance.  The recursions run in small
numba kernels; the likelihood used by the optimizer is fused with the filter.

Initialisation when no explicit state is supplied: ``mu_1`` is the sample mean,
``s2_1`` the sample variance, and the ARMA recursion proper starts at t=2.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import numba
from scipy import special

from .errors import ConvergenceError, DegenerateDataError, DomainError, InsufficientDataError, ShapeError

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "student_t")
NU_FLOOR = 4.01
VARIANCE_FLOOR = 1e-12
MIN_OBSERVATIONS = 100
# fitted values this close to a constraint surface trigger a boundary warning
PERSISTENCE_WARN = 0.999
COEF_WARN = 0.995
_BOUND = 0.9999


@dataclass(frozen=True)
class GarchParams:
    phi0: float
    phi1: float
    theta1: float
    alpha0: float
    alpha1: float
    beta1: float
    family: str = "gaussian"
    nu: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown innovation family {self.family!r}")
        if not self.alpha0 > 0:
            raise DomainError(f"alpha0 must be positive, got {self.alpha0}")
        if self.alpha1 < 0 or self.beta1 < 0:
            raise DomainError("alpha1 and beta1 must be non-negative")
        if not self.alpha1 + self.beta1 < 1:
            raise DomainError(f"alpha1 + beta1 = {self.alpha1 + self.beta1} violates stationarity")
        if not abs(self.phi1) < 1:
            raise DomainError(f"|phi1| must be < 1, got {self.phi1}")
        if self.family == "student_t":
            if self.nu is None or not self.nu > 2:
                raise DomainError("student_t innovations need nu > 2")

    @property
    def persistence(self) -> float:
        return self.alpha1 + self.beta1

    @property
    def unconditional_variance(self) -> float:
        return self.alpha0 / (1.0 - self.persistence)

    def to_dict(self) -> dict:
        return {
            "phi0": self.phi0,
            "phi1": self.phi1,
            "theta1": self.theta1,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "beta1": self.beta1,
            "family": self.family,
            "nu": self.nu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GarchParams":
        nu = d.get("nu")
        return cls(
            phi0=float(d["phi0"]),
            phi1=float(d["phi1"]),
            theta1=float(d["theta1"]),
            alpha0=float(d["alpha0"]),
            alpha1=float(d["alpha1"]),
            beta1=float(d["beta1"]),
            family=d.get("family", "gaussian"),
            nu=None if nu is None else float(nu),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GarchParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GarchState:
    params: GarchParams
    returns: np.ndarray
    innovations: np.ndarray
    cond_variances: np.ndarray
    residuals: np.ndarray
    loglik: float = float("nan")
    warnings: tuple[str, ...] = field(default=())

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.cond_variances)


@dataclass(frozen=True)
class Forecast:
    mu_next: float
    sigma_next: float


# ---------------------------------------------------------------------------
# filtering


@numba.njit(cache=True)
def _recursion_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20, a, s2):
    a[0] = a0
    s2[0] = s20
    for t in range(1, r.size):
        a[t] = r[t] - phi0 - phi1 * r[t - 1] - theta1 * a[t - 1]
        v = alpha0 + alpha1 * a[t - 1] * a[t - 1] + beta1 * s2[t - 1]
        s2[t] = v if v > VARIANCE_FLOOR else VARIANCE_FLOOR


@numba.njit(cache=True)
def _gaussian_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20):
    # fused filter + likelihood for the optimizer's inner loop
    log2pi = math.log(2.0 * math.pi)
    a_prev = a0
    s2_prev = s20
    total = log2pi + math.log(s20) + a0 * a0 / s20
    for t in range(1, r.size):
        a_t = r[t] - phi0 - phi1 * r[t - 1] - theta1 * a_prev
        v = alpha0 + alpha1 * a_prev * a_prev + beta1 * s2_prev
        if v < VARIANCE_FLOOR:
            v = VARIANCE_FLOOR
        total += log2pi + math.log(v) + a_t * a_t / v
        a_prev = a_t
        s2_prev = v
    return 0.5 * total


@numba.njit(cache=True)
def _student_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20, nu):
    a_prev = a0
    s2_prev = s20
    k = nu - 2.0
    total = math.log(s20) + (nu + 1.0) * math.log1p(a0 * a0 / (s20 * k))
    for t in range(1, r.size):
        a_t = r[t] - phi0 - phi1 * r[t - 1] - theta1 * a_prev
        v = alpha0 + alpha1 * a_prev * a_prev + beta1 * s2_prev
        if v < VARIANCE_FLOOR:
            v = VARIANCE_FLOOR
        total += math.log(v) + (nu + 1.0) * math.log1p(a_t * a_t / (v * k))
        a_prev = a_t
        s2_prev = v
    c = math.lgamma((nu + 1.0) / 2.0) - math.lgamma(nu / 2.0) - 0.5 * math.log(math.pi * k)
    return -(r.size * c) + 0.5 * total


@numba.njit(cache=True)
def _expit_nb(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@numba.njit(cache=True)
def _objective_nb(x, r, student, scale, var, a0, s20):
    """Negative log-likelihood at unconstrained ``x``; mirrors ``_Transform.raw``."""
    persistence = _BOUND * _expit_nb(x[4])
    share = _expit_nb(x[5])
    e = min(max(x[3], -700.0), 700.0)
    phi0 = x[0] * scale
    phi1 = _BOUND * math.tanh(x[1])
    theta1 = _BOUND * math.tanh(x[2])
    alpha0 = var * math.exp(e)
    alpha1 = persistence * share
    beta1 = persistence * (1.0 - share)
    if student:
        lo = 1.0 / NU_CAP
        hi = 1.0 / NU_FLOOR
        nu = 1.0 / (lo + (hi - lo) * _expit_nb(x[6]))
        val = _student_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20, nu)
    else:
        val = _gaussian_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20)
    if math.isfinite(val):
        return val
    return np.inf


@numba.njit(cache=True)
def _nelder_mead(x0, r, student, scale, var, a0, s20, fatol, maxfev):
    """Adaptive Nelder-Mead (dimension-dependent coefficients) stopping on ``fatol``.

    Follows the same steps as scipy's implementation with ``xatol = inf``;
    compiled because the per-evaluation cost is only a few microseconds.
    Returns ``(x, f, evaluations, converged)``.
    """
    n = x0.size
    rho = 1.0
    chi = 1.0 + 2.0 / n
    psi = 0.75 - 1.0 / (2.0 * n)
    sig = 1.0 - 1.0 / n
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    sim[0] = x0
    for k in range(n):
        y = x0.copy()
        y[k] = y[k] * 1.05 if y[k] != 0.0 else 0.00025
        sim[k + 1] = y
    for k in range(n + 1):
        fs[k] = _objective_nb(sim[k], r, student, scale, var, a0, s20)
    nfev = n + 1
    order = np.argsort(fs, kind="mergesort")
    sim = sim[order]
    fs = fs[order]
    converged = False
    while nfev < maxfev:
        spread = 0.0
        for k in range(1, n + 1):
            spread = max(spread, abs(fs[0] - fs[k]))
        if spread <= fatol:
            converged = True
            break
        xbar = np.zeros(n)
        for k in range(n):
            xbar += sim[k]
        xbar /= n
        xr = (1.0 + rho) * xbar - rho * sim[n]
        fxr = _objective_nb(xr, r, student, scale, var, a0, s20)
        nfev += 1
        shrink = False
        if fxr < fs[0]:
            xe = (1.0 + rho * chi) * xbar - rho * chi * sim[n]
            fxe = _objective_nb(xe, r, student, scale, var, a0, s20)
            nfev += 1
            if fxe < fxr:
                sim[n] = xe
                fs[n] = fxe
            else:
                sim[n] = xr
                fs[n] = fxr
        elif fxr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fxr
        elif fxr < fs[n]:
            xc = (1.0 + psi * rho) * xbar - psi * rho * sim[n]
            fxc = _objective_nb(xc, r, student, scale, var, a0, s20)
            nfev += 1
            if fxc <= fxr:
                sim[n] = xc
                fs[n] = fxc
            else:
                shrink = True
        else:
            xcc = (1.0 - psi) * xbar + psi * sim[n]
            fxcc = _objective_nb(xcc, r, student, scale, var, a0, s20)
            nfev += 1
            if fxcc < fs[n]:
                sim[n] = xcc
                fs[n] = fxcc
            else:
                shrink = True
        if shrink:
            for k in range(1, n + 1):
                sim[k] = sim[0] + sig * (sim[k] - sim[0])
                fs[k] = _objective_nb(sim[k], r, student, scale, var, a0, s20)
                nfev += 1
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
    return sim[0].copy(), fs[0], nfev, converged


def _initial(params: GarchParams, r: np.ndarray, init):
    p = params
    if init is None:
        a0 = r[0] - r.mean()
        s20 = r.var(ddof=1) if r.size > 1 else p.unconditional_variance
    else:
        r_prev, a_prev, s2_prev = (float(v) for v in init)
        a0 = r[0] - p.phi0 - p.phi1 * r_prev - p.theta1 * a_prev
        s20 = p.alpha0 + p.alpha1 * a_prev**2 + p.beta1 * s2_prev
    return float(a0), max(float(s20), VARIANCE_FLOOR)


def _recursions(params: GarchParams, r: np.ndarray, init=None):
    """Residuals and conditional variances for ``r`` under ``params``.

    ``init`` is ``(r_prev, a_prev, s2_prev)``: the state one step before
    ``r[0]``.  Without it the sample-moment initialisation is used.
    """
    p = params
    a0, s20 = _initial(p, r, init)
    a = np.empty_like(r)
    s2 = np.empty_like(r)
    _recursion_kernel(r, p.phi0, p.phi1, p.theta1, p.alpha0, p.alpha1, p.beta1, a0, s20, a, s2)
    return a, s2


def _negloglik(p: GarchParams, r: np.ndarray, init=None) -> float:
    a0, s20 = _initial(p, r, init)
    args = (r, p.phi0, p.phi1, p.theta1, p.alpha0, p.alpha1, p.beta1, a0, s20)
    if p.family == "gaussian":
        return _gaussian_nll_kernel(*args)
    return _student_nll_kernel(*args, float(p.nu))


def _loglik_terms(a: np.ndarray, s2: np.ndarray, family: str, nu: Optional[float]) -> float:
    if family == "gaussian":
        return -0.5 * float(np.sum(np.log(2.0 * np.pi * s2) + a * a / s2))
    c = (
        special.gammaln((nu + 1.0) / 2.0)
        - special.gammaln(nu / 2.0)
        - 0.5 * math.log(math.pi * (nu - 2.0))
    )
    z2 = a * a / (s2 * (nu - 2.0))
    return float(a.size * c - 0.5 * np.sum(np.log(s2)) - 0.5 * (nu + 1.0) * np.sum(np.log1p(z2)))


def loglik(params: GarchParams, returns, init=None) -> float:
    """Conditional log-likelihood of ``returns`` under ``params``."""
    r = np.asarray(returns, dtype=float)
    a, s2 = _recursions(params, r, init)
    return _loglik_terms(a, s2, params.family, params.nu)


def filter_innovations(params: GarchParams, returns, init=None) -> GarchState:
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ShapeError("returns must be a non-empty 1-d sequence")
    a, s2 = _recursions(params, r, init)
    eps = a / np.sqrt(s2)
    return GarchState(
        params=params,
        returns=r,
        innovations=eps,
        cond_variances=s2,
        residuals=a,
        loglik=_loglik_terms(a, s2, params.family, params.nu),
    )


def forecast_one_step(state: GarchState) -> Forecast:
    p = state.params
    if state.returns.size == 0:
        raise ShapeError("empty state")
    r_T = state.returns[-1]
    a_T = state.residuals[-1]
    s2_T = state.cond_variances[-1]
    mu = p.phi0 + p.phi1 * r_T + p.theta1 * a_T
    s2 = max(p.alpha0 + p.alpha1 * a_T**2 + p.beta1 * s2_T, VARIANCE_FLOOR)
    return Forecast(float(mu), float(math.sqrt(s2)))


def terminal_values(state: GarchState) -> tuple[float, float, float]:
    """``(r_T, a_T, s2_T)``: the ``init`` that continues filtering after ``state``."""
    return float(state.returns[-1]), float(state.residuals[-1]), float(state.cond_variances[-1])


def simulate_paths(state: GarchState, innovations) -> np.ndarray:
    """Run the recursions forward from the end of ``state``.

    ``innovations`` is an ``N x H`` array of eps draws; returns ``N x H`` returns.
    """
    eps = np.asarray(innovations, dtype=float)
    if eps.ndim != 2:
        raise ShapeError(f"innovations must be N x H, got shape {eps.shape}")
    p = state.params
    n, horizon = eps.shape
    r_prev = np.full(n, state.returns[-1])
    a_prev = np.full(n, state.residuals[-1])
    s2_prev = np.full(n, state.cond_variances[-1])
    out = np.empty_like(eps)
    for h in range(horizon):
        mu = p.phi0 + p.phi1 * r_prev + p.theta1 * a_prev
        s2 = np.maximum(p.alpha0 + p.alpha1 * a_prev**2 + p.beta1 * s2_prev, VARIANCE_FLOOR)
        a = np.sqrt(s2) * eps[:, h]
        out[:, h] = mu + a
        r_prev, a_prev, s2_prev = out[:, h], a, s2
    return out


def simulate_garch(params: GarchParams, innovations, burn: int = 500) -> np.ndarray:
    """Simulate a return series driven by ``innovations``.

    Starts at the unconditional mean and variance and discards the first
    ``burn`` outputs, so ``len(innovations) - burn`` returns come back.
    """
    eps = np.asarray(innovations, dtype=float)
    if eps.ndim != 1 or eps.size <= burn:
        raise ShapeError("need a 1-d innovation sequence longer than the burn-in")
    p = params
    r_prev = p.phi0 / (1.0 - p.phi1)
    a_prev = 0.0
    s2_prev = p.unconditional_variance
    out = np.empty(eps.size)
    for t, e in enumerate(eps):
        mu = p.phi0 + p.phi1 * r_prev + p.theta1 * a_prev
        s2 = p.alpha0 + p.alpha1 * a_prev * a_prev + p.beta1 * s2_prev
        a = math.sqrt(s2) * e
        out[t] = r_prev = mu + a
        a_prev, s2_prev = a, s2
    return out[burn:]


# ---------------------------------------------------------------------------
# fitting


def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


# nu is searched through 1/nu in (1/NU_CAP, 1/NU_FLOOR); the likelihood is
# smooth in 1/nu as the tails thin out toward the Gaussian limit
NU_CAP = 500.0


def _nu_from(x) -> float:
    lo, hi = 1.0 / NU_CAP, 1.0 / NU_FLOOR
    return 1.0 / (lo + (hi - lo) * _expit(x))


def _nu_to(nu) -> float:
    lo, hi = 1.0 / NU_CAP, 1.0 / NU_FLOOR
    u = (1.0 / min(max(nu, NU_FLOOR), NU_CAP) - lo) / (hi - lo)
    u = min(max(u, 1e-9), 1 - 1e-9)
    return math.log(u / (1.0 - u))


def _logit(p):
    return math.log(p / (1.0 - p))


class _Transform:
    """Maps an unconstrained vector to feasible GarchParams and back."""

    def __init__(self, family: str, scale: float, var: float):
        self.family = family
        self.scale = scale
        self.var = var

    @property
    def dim(self) -> int:
        return 7 if self.family == "student_t" else 6

    def raw(self, x):
        """``(phi0, phi1, theta1, alpha0, alpha1, beta1, nu)`` as plain floats."""
        persistence = _BOUND * _expit(x[4])
        share = _expit(x[5])
        nu = _nu_from(x[6]) if self.family == "student_t" else math.nan
        return (
            x[0] * self.scale,
            _BOUND * math.tanh(x[1]),
            _BOUND * math.tanh(x[2]),
            self.var * math.exp(min(max(x[3], -700.0), 700.0)),
            persistence * share,
            persistence * (1.0 - share),
            nu,
        )

    def params(self, x) -> GarchParams:
        phi0, phi1, theta1, alpha0, alpha1, beta1, nu = (float(v) for v in self.raw(x))
        return GarchParams(
            phi0=phi0,
            phi1=phi1,
            theta1=theta1,
            alpha0=alpha0,
            alpha1=alpha1,
            beta1=beta1,
            family=self.family,
            nu=nu if self.family == "student_t" else None,
        )

    def vector(self, p: GarchParams) -> np.ndarray:
        def clip(v, lo=1e-9, hi=1 - 1e-9):
            return min(max(v, lo), hi)

        persistence = clip(p.persistence / _BOUND)
        share = clip(p.alpha1 / p.persistence) if p.persistence > 0 else 0.5
        x = [
            p.phi0 / self.scale,
            math.atanh(clip(p.phi1 / _BOUND, -1 + 1e-9)),
            math.atanh(clip(p.theta1 / _BOUND, -1 + 1e-9)),
            math.log(p.alpha0 / self.var),
            _logit(persistence),
            _logit(share),
        ]
        if self.family == "student_t":
            x.append(_nu_to(p.nu if p.nu is not None else 8.0))
        return np.array(x)


def _boundary_warnings(p: GarchParams) -> tuple[str, ...]:
    notes = []
    if p.persistence > PERSISTENCE_WARN:
        notes.append(f"alpha1 + beta1 = {p.persistence:.6f} is on the stationarity boundary")
    if abs(p.phi1) > COEF_WARN:
        notes.append(f"|phi1| = {abs(p.phi1):.6f} is on the AR stationarity boundary")
    if abs(p.theta1) > COEF_WARN:
        notes.append(f"|theta1| = {abs(p.theta1):.6f} is on the MA invertibility boundary")
    if p.family == "student_t" and p.nu is not None and p.nu < NU_FLOOR + 1e-3:
        notes.append(f"nu = {p.nu:.4f} is at its floor")
    if p.family == "student_t" and p.nu is not None and p.nu > NU_CAP * 0.99:
        notes.append(f"nu = {p.nu:.1f} is at its cap (innovations look Gaussian)")
    return tuple(notes)


def _grid_seeds(tr: _Transform, r: np.ndarray, var: float):
    mean = r.mean()
    for persistence in (0.6, 0.85, 0.95, 0.98):
        for share in (0.05, 0.1, 0.2):
            for nu in ((6.0,) if tr.family == "student_t" else (None,)):
                yield GarchParams(
                    phi0=mean,
                    phi1=0.0,
                    theta1=0.0,
                    alpha0=var * (1.0 - persistence),
                    alpha1=persistence * share,
                    beta1=persistence * (1.0 - share),
                    family=tr.family,
                    nu=nu,
                )


def fit_arma_garch(
    returns: Sequence[float],
    innovation_family: str = "gaussian",
    *,
    start: Optional[GarchParams] = None,
    min_observations: int = MIN_OBSERVATIONS,
    tol: float = 1e-8,
    max_iter: int = 20000,
    max_restarts: int = 4,
) -> GarchState:
    """Maximum-likelihood ARMA(1,1)-GARCH(1,1) fit.

    A coarse grid of variance-targeted starting points (or ``start``, when a
    previous fit is available) seeds a Nelder-Mead search in a reparameterised
    space where stationarity and invertibility always hold.  The simplex is
    restarted from its own optimum until the log-likelihood improves by less
    than ``tol``.

    Raises DegenerateDataError for constant input and ConvergenceError
    (carrying the best GarchState so far as ``.best``) when the iteration
    budget runs out.  Fits that end near a constraint surface come back with
    a note in ``state.warnings``.
    """
    if innovation_family not in FAMILIES:
        raise DomainError(f"unknown innovation family {innovation_family!r}")
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1:
        raise ShapeError("returns must be 1-d")
    if r.size < min_observations:
        raise InsufficientDataError(f"need at least {min_observations} returns, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise DomainError("returns contain non-finite values")
    var = float(r.var(ddof=1))
    if not var > 0 or np.ptp(r) == 0:
        raise DegenerateDataError("return series is constant")
    scale = math.sqrt(var)
    tr = _Transform(innovation_family, scale, var)

    a0 = float(r[0] - r.mean())
    s20 = max(var, VARIANCE_FLOOR)
    student = innovation_family == "student_t"

    def objective(x):
        phi0, phi1, theta1, alpha0, alpha1, beta1, nu = tr.raw(x)
        if student:
            val = _student_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20, nu)
        else:
            val = _gaussian_nll_kernel(r, phi0, phi1, theta1, alpha0, alpha1, beta1, a0, s20)
        return val if math.isfinite(val) else np.inf

    if start is not None:
        if start.family != innovation_family:
            start = replace(start, family=innovation_family, nu=6.0 if innovation_family == "student_t" else None)
        x0 = tr.vector(start)
    else:
        seeds = [tr.vector(p) for p in _grid_seeds(tr, r, var)]
        x0 = min(seeds, key=objective)

    best_x, best_f = x0, objective(x0)
    evals = 0
    converged = False
    for _ in range(max_restarts + 1):
        # fatol only: flat directions (nu -> inf, phi1 ~ -theta1 on white
        # noise) would never settle under a parameter tolerance
        x, f, nfev, ok = _nelder_mead(
            np.asarray(best_x, dtype=float), r, student, scale, var, a0, s20, tol, max_iter
        )
        evals += nfev
        improved = best_f - f
        if f <= best_f:
            best_x, best_f = x, f
        # restart test relative to the likelihood scale: a simplex that keeps
        # creeping along a flat ridge gains ~1e-9 per restart indefinitely
        if ok and improved < tol * max(1.0, abs(best_f)):
            converged = True
            break
        if evals >= max_iter * (max_restarts + 1):
            break

    params = tr.params(best_x)
    state = filter_innovations(params, r)
    state = replace(state, warnings=_boundary_warnings(params))
    if not converged:
        raise ConvergenceError(
            f"ARMA-GARCH likelihood did not converge after {evals} evaluations", best=state
        )
    for w in state.warnings:
        log.debug("fit_arma_garch: %s", w)
    return state
