"""Long-only minimum-variance and minimum-CVaR portfolios on simulated scenarios.

Both objectives are solved over the box-constrained simplex
``{w : sum(w) = 1, lower <= w <= upper}``.

* Minimum variance: projected gradient descent on ``w' S w`` followed by an
  exact active-set polish of the KKT system.
* Minimum CVaR: the Rockafellar-Uryasev linear program, solved with HiGHS.
  The tail average uses ``m = floor(alpha N)`` scenarios, so the LP optimum
  equals :func:`cryptorisk.risk.cvar` of the optimal portfolio exactly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize as _opt
from scipy import sparse

from . import garch, risk
from . import rng as _rng
from .dist import JointModelSpec, fit_joint, sample_joint
from .errors import (
    CryptoRiskError,
    DomainError,
    InfeasibleError,
    InsufficientDataError,
    ShapeError,
    SolverError,
)
from .marketdata import ReturnPanel

log = logging.getLogger(__name__)

OBJECTIVES = ("variance", "cvar")
KKT_TOL = 1e-8
_LP_CHECK_TOL = 1e-7

Bounds = Union[tuple[float, float], tuple[Sequence[float], Sequence[float]]]


@dataclass(frozen=True)
class FrontierPoint:
    weights: np.ndarray
    expected_return: float
    risk: float  # volatility for "variance", CVaR for "cvar"
    objective: str
    kkt_residual: float = 0.0


def _scenarios(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("scenarios must be an N x d matrix with N >= 2")
    if not np.all(np.isfinite(x)):
        raise DomainError("scenarios contain non-finite values")
    return x


def _bounds(bounds: Optional[Bounds], d: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = (0.0, 1.0) if bounds is None else bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,)).copy()
    if np.any(lo > hi) or lo.sum() > 1.0 + 1e-12 or hi.sum() < 1.0 - 1e-12:
        raise InfeasibleError(
            f"no weights with sum 1 inside the bounds (sum lower = {lo.sum():g}, sum upper = {hi.sum():g})"
        )
    return lo, hi


def project_box_simplex(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{w : sum w = 1, lo <= w <= hi}``.

    The projection is ``clip(v - tau, lo, hi)``.  The weight sum is piecewise
    linear and non-increasing in ``tau`` with kinks at ``v - hi`` and
    ``v - lo``, so ``tau`` follows exactly from the bracketing pair of kinks.
    """
    v = np.asarray(v, dtype=float)
    kinks = np.unique(np.concatenate([v - hi, v - lo]))
    kinks = kinks[np.isfinite(kinks)]
    if kinks.size == 0:
        tau = (v.sum() - 1.0) / v.size
    else:
        totals = np.clip(v[None, :] - kinks[:, None], lo, hi).sum(axis=1)
        k = int(np.searchsorted(-totals, -1.0, side="left"))  # first kink with total <= 1
        if k < kinks.size and totals[k] == 1.0:
            tau = kinks[k]
        else:
            if k == 0:
                probe = kinks[0] - 1.0
            elif k == kinks.size:
                probe = kinks[-1] + 1.0
            else:
                probe = 0.5 * (kinks[k - 1] + kinks[k])
            n_free = int(np.count_nonzero((v - probe > lo) & (v - probe < hi)))
            if n_free == 0:
                raise InfeasibleError("bounds admit no weights summing to one")
            ref = max(k - 1, 0)
            tau = kinks[ref] + (totals[ref] - 1.0) / n_free
    w = np.clip(v - tau, lo, hi)
    # place the last rounding error on a free coordinate
    free = np.flatnonzero((w > lo) & (w < hi))
    if free.size:
        j = free[np.argmax(np.minimum(w[free] - lo[free], hi[free] - w[free]))]
        w[j] = min(max(w[j] + 1.0 - w.sum(), lo[j]), hi[j])
    return w


def _kkt_residual(w: np.ndarray, grad: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Scale-free projected-gradient residual ``|w - P(w - g/|g|)|_inf``."""
    gnorm = float(np.max(np.abs(grad)))
    if gnorm == 0:
        return 0.0
    return float(np.max(np.abs(w - project_box_simplex(w - grad / gnorm, lo, hi))))


def _active_set_polish(cov, w, lo, hi, max_rounds: int = 50):
    """Solve the equality-constrained KKT system on the free set and repair it until it is consistent."""
    d = w.size
    tol = 1e-10
    at_lo = w <= lo + tol
    at_hi = (w >= hi - tol) & ~at_lo
    for _ in range(max_rounds):
        free = ~(at_lo | at_hi)
        if not free.any():
            return None
        fixed = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
        f_idx = np.flatnonzero(free)
        k = f_idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * cov[np.ix_(f_idx, f_idx)]
        kkt[:k, k] = -1.0
        kkt[k, :k] = 1.0
        rhs = np.empty(k + 1)
        rhs[:k] = -2.0 * cov[f_idx] @ fixed
        rhs[k] = 1.0 - fixed.sum()
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            return None
        cand = fixed.copy()
        cand[f_idx] = sol[:k]
        lam = sol[k]
        # primal repair: pin free coordinates that left the box
        below = free & (cand < lo - tol)
        above = free & (cand > hi + tol)
        if below.any() or above.any():
            at_lo |= below
            at_hi |= above
            continue
        # dual repair: release bound coordinates with the wrong multiplier sign
        g = 2.0 * cov @ cand - lam
        wrong_lo = at_lo & (g < -tol * max(1.0, abs(lam)))
        wrong_hi = at_hi & (g > tol * max(1.0, abs(lam)))
        if wrong_lo.any() or wrong_hi.any():
            at_lo &= ~wrong_lo
            at_hi &= ~wrong_hi
            continue
        return np.clip(cand, lo, hi)
    return None


def min_variance_weights(
    scenarios,
    bounds: Optional[Bounds] = None,
    *,
    cov: Optional[np.ndarray] = None,
    max_iter: int = 20_000,
) -> FrontierPoint:
    """Minimum-variance weights for the scenario (or supplied) covariance matrix."""
    x = _scenarios(scenarios)
    d = x.shape[1]
    lo, hi = _bounds(bounds, d)
    s = np.cov(x, rowvar=False, ddof=1).reshape(d, d) if cov is None else np.asarray(cov, dtype=float)
    mean = x.mean(axis=0)
    if d == 1:
        return FrontierPoint(np.ones(1), float(mean[0]), math.sqrt(float(s[0, 0])), "variance", 0.0)

    # normalise so the step size and tolerances do not depend on the return scale
    scale = float(np.trace(s)) / d
    if not scale > 0:
        raise DomainError("scenario covariance is zero")
    q = s / scale
    step = 1.0 / (2.0 * float(np.linalg.eigvalsh(q).max()))
    w = project_box_simplex(np.full(d, 1.0 / d), lo, hi)
    y, t_k = w.copy(), 1.0
    resid = math.inf
    for it in range(1, max_iter + 1):
        w_next = project_box_simplex(y - step * 2.0 * q @ y, lo, hi)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        y = w_next + (t_k - 1.0) / t_next * (w_next - w)
        done = np.max(np.abs(w_next - w)) < 1e-13
        w, t_k = w_next, t_next
        if done or it in (1, 10) or it % 50 == 0:
            # the active set is usually identified long before the iterates settle
            polished = _active_set_polish(q, w, lo, hi)
            if polished is not None and polished @ q @ polished <= w @ q @ w + 1e-15:
                p_resid = _kkt_residual(polished, 2.0 * q @ polished, lo, hi)
                if p_resid <= KKT_TOL:
                    w, resid = polished, p_resid
                    break
            if done:
                resid = _kkt_residual(w, 2.0 * q @ w, lo, hi)
                break
    if resid > KKT_TOL:
        resid = _kkt_residual(w, 2.0 * q @ w, lo, hi)
    if resid > KKT_TOL:
        raise SolverError(f"minimum-variance solution has KKT residual {resid:.3g}")
    return FrontierPoint(w, float(mean @ w), math.sqrt(max(float(w @ s @ w), 0.0)), "variance", resid)


def _cvar_lp(x, alpha, lo, hi, min_return=None):
    n, d = x.shape
    m = risk.tail_count(alpha, n)
    if m < 1:
        raise InsufficientDataError(f"alpha * N = {alpha * n:g} < 1: CVaR undefined")
    # variables: w (d), zeta, u (n)
    c = np.concatenate([np.zeros(d), [1.0], np.full(n, 1.0 / m)])
    a_ub = sparse.hstack(
        [sparse.csr_matrix(-x), sparse.csr_matrix(-np.ones((n, 1))), -sparse.identity(n, format="csr")],
        format="csr",
    )
    b_ub = np.zeros(n)
    mean = x.mean(axis=0)
    if min_return is not None:
        row = sparse.csr_matrix(np.concatenate([-mean, np.zeros(n + 1)])[None, :])
        a_ub = sparse.vstack([a_ub, row], format="csr")
        b_ub = np.append(b_ub, -min_return)
    a_eq = sparse.csr_matrix(np.concatenate([np.ones(d), np.zeros(n + 1)])[None, :])
    bounds = [(lo[i], hi[i]) for i in range(d)] + [(None, None)] + [(0.0, None)] * n
    res = _opt.linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise InfeasibleError(res.message)
    if res.status != 0:
        raise SolverError(f"CVaR linear program failed: {res.message}")
    return project_box_simplex(res.x[:d], lo, hi), float(res.fun)


def min_cvar_weights(
    scenarios, alpha: float = risk.DEFAULT_ALPHA, bounds: Optional[Bounds] = None
) -> FrontierPoint:
    """Minimum-CVaR weights over the scenario matrix (linear program)."""
    x = _scenarios(scenarios)
    d = x.shape[1]
    lo, hi = _bounds(bounds, d)
    mean = x.mean(axis=0)
    if d == 1:
        return FrontierPoint(np.ones(1), float(mean[0]), risk.cvar(x[:, 0], alpha), "cvar", 0.0)
    w, lp_value = _cvar_lp(x, alpha, lo, hi)
    realised = risk.cvar(x @ w, alpha)
    if abs(realised - lp_value) > _LP_CHECK_TOL * max(1.0, abs(lp_value)):
        raise SolverError(f"LP objective {lp_value:.12g} disagrees with scenario CVaR {realised:.12g}")
    return FrontierPoint(w, float(mean @ w), realised, "cvar", 0.0)


def _max_return(mean: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    # greedy fill of the highest-mean assets is optimal for a linear objective
    w = lo.copy()
    budget = 1.0 - lo.sum()
    for i in np.argsort(-mean, kind="stable"):
        take = min(hi[i] - lo[i], budget)
        w[i] += take
        budget -= take
    return float(mean @ w)


def _min_variance_at(s, mean, target, lo, hi, w0):
    d = mean.size
    scale = float(np.trace(s)) / d
    q = s / scale
    res = _opt.minimize(
        lambda w: float(w @ q @ w),
        w0,
        jac=lambda w: 2.0 * q @ w,
        method="SLSQP",
        bounds=list(zip(lo, hi)),
        constraints=[
            {"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(d)},
            {"type": "ineq", "fun": lambda w: (mean @ w - target) / max(abs(target), 1e-12),
             "jac": lambda w: mean / max(abs(target), 1e-12)},
        ],
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    if not res.success:
        raise SolverError(f"frontier point at target {target:g}: {res.message}")
    return np.clip(res.x, lo, hi)


def efficient_frontier(
    scenarios,
    objective: str = "variance",
    bounds: Optional[Bounds] = None,
    n_points: int = 20,
    alpha: float = risk.DEFAULT_ALPHA,
) -> list[FrontierPoint]:
    """Frontier from the minimum-risk portfolio up to the maximum attainable mean.

    Target means are evenly spaced; the first point is the unconstrained
    minimum-risk solution itself.
    """
    if objective not in OBJECTIVES:
        raise DomainError(f"objective must be one of {OBJECTIVES}")
    x = _scenarios(scenarios)
    d = x.shape[1]
    lo, hi = _bounds(bounds, d)
    mean = x.mean(axis=0)
    first = min_variance_weights(x, bounds) if objective == "variance" else min_cvar_weights(x, alpha, bounds)
    top = _max_return(mean, lo, hi)
    if n_points < 2 or top - first.expected_return <= 1e-12 * max(1.0, abs(top)):
        return [first]
    s = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    points = [first]
    w_prev = first.weights
    for target in np.linspace(first.expected_return, top, n_points)[1:]:
        if objective == "variance":
            w = _min_variance_at(s, mean, target, lo, hi, w_prev)
            points.append(FrontierPoint(w, float(mean @ w), math.sqrt(max(float(w @ s @ w), 0.0)), objective))
        else:
            w, _ = _cvar_lp(x, alpha, lo, hi, min_return=target)
            points.append(FrontierPoint(w, float(mean @ w), risk.cvar(x @ w, alpha), objective))
        w_prev = w
    return points


# ---------------------------------------------------------------------------
# rolling out-of-sample optimisation


@dataclass(frozen=True)
class RollingConfig:
    window: int = 252
    scenarios: int = 10_000
    alpha: float = risk.DEFAULT_ALPHA
    model: JointModelSpec = JointModelSpec("mvt", nu=5.0)
    bounds: Optional[Bounds] = None
    seed: int = 0
    warm_start: bool = True
    # solve the CVaR LP on only the first k scenarios (draws are iid, so any prefix is a fair subsample)
    cvar_subsample: Optional[int] = None

    def __post_init__(self):
        if self.cvar_subsample is not None and not 2 <= self.cvar_subsample:
            raise DomainError("cvar_subsample must be at least 2")
        if self.window < garch.MIN_OBSERVATIONS:
            raise DomainError(f"window must be at least {garch.MIN_OBSERVATIONS}")
        if self.scenarios < 2:
            raise DomainError("need at least two scenarios")


@dataclass(frozen=True)
class PortfolioTrack:
    objective: str
    assets: tuple[str, ...]
    dates: np.ndarray
    weights: np.ndarray  # T x d, chosen with data strictly before each date
    returns: np.ndarray  # realised portfolio log returns
    failed: np.ndarray  # True where the optimizer failed and weights were carried forward

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative simple return ``exp(sum r) - 1``."""
        return np.expm1(np.cumsum(self.returns))


def rolling_optimize_many(
    panel: ReturnPanel, objectives: Sequence[str] = OBJECTIVES, config: RollingConfig = RollingConfig()
) -> dict[str, PortfolioTrack]:
    """Re-optimise every day on scenarios simulated from the trailing window.

    All objectives share the same fitted models and scenario draws each day.
    """
    for obj in objectives:
        if obj not in OBJECTIVES:
            raise DomainError(f"objective must be one of {OBJECTIVES}")
    r = panel.returns
    t_total, d = r.shape
    if t_total <= config.window:
        raise InsufficientDataError(f"panel has {t_total} rows, need more than window={config.window}")
    n_out = t_total - config.window
    weights = {obj: np.empty((n_out, d)) for obj in objectives}
    failed = {obj: np.zeros(n_out, dtype=bool) for obj in objectives}
    previous = {obj: np.full(d, 1.0 / d) for obj in objectives}
    family = config.model.innovation_family
    params: list[Optional[garch.GarchParams]] = [None] * d

    for i, t in enumerate(range(config.window, t_total)):
        if d == 1:
            for obj in objectives:
                weights[obj][i] = 1.0
            continue
        win = r[t - config.window : t]
        try:
            mus, sigmas, eps = [], [], []
            for j in range(d):
                start = params[j] if config.warm_start else None
                state = garch.fit_arma_garch(win[:, j], family, start=start)
                params[j] = state.params
                fc = garch.forecast_one_step(state)
                mus.append(fc.mu_next)
                sigmas.append(fc.sigma_next)
                eps.append(state.innovations)
            joint = fit_joint(config.model, np.column_stack(eps))
            key = _rng.seed_key(config.seed, _rng.stream_id("optimize"), i)
            scen = np.array(mus) + np.array(sigmas) * sample_joint(joint, config.scenarios, key)
        except (CryptoRiskError, np.linalg.LinAlgError) as exc:
            log.warning("%s: scenario model failed (%s); carrying weights forward", panel.dates[t], exc)
            scen = None
        for obj in objectives:
            try:
                if scen is None:
                    raise SolverError("no scenarios")
                point = (
                    min_variance_weights(scen, config.bounds)
                    if obj == "variance"
                    else min_cvar_weights(scen[: config.cvar_subsample], config.alpha, config.bounds)
                )
                previous[obj] = point.weights
            except CryptoRiskError as exc:
                if scen is not None:
                    log.warning("%s: %s optimizer failed (%s); carrying weights forward", panel.dates[t], obj, exc)
                failed[obj][i] = True
            weights[obj][i] = previous[obj]

    dates = panel.dates[config.window :]
    realised = r[config.window :]
    return {
        obj: PortfolioTrack(
            obj, panel.assets, dates, weights[obj], np.einsum("ij,ij->i", weights[obj], realised), failed[obj]
        )
        for obj in objectives
    }


def rolling_optimize(
    panel: ReturnPanel, objective: str = "cvar", config: RollingConfig = RollingConfig()
) -> PortfolioTrack:
    return rolling_optimize_many(panel, (objective,), config)[objective]


# ---------------------------------------------------------------------------
# export

PORTFOLIO_LABELS = {"cvar": "min CVaR portfolio", "variance": "min Variance portfolio"}


def write_track_csv(track: PortfolioTrack, path, header_lines: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *(f"w_{a}" for a in track.assets), "return", "cumulative", "carried_forward"])
        for k in range(track.dates.size):
            writer.writerow([
                str(track.dates[k]),
                *(repr(float(v)) for v in track.weights[k]),
                repr(float(track.returns[k])),
                repr(float(track.cumulative[k])),
                int(track.failed[k]),
            ])


def read_track_csv(path, objective: str) -> PortfolioTrack:
    rows, assets = [], None
    with Path(path).open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        assets = tuple(h[2:] for h in header[1:-3])
        for row in reader:
            rows.append(row)
    d = len(assets)
    dates = np.array([np.datetime64(r[0], "D") for r in rows])
    weights = np.array([[float(v) for v in r[1 : 1 + d]] for r in rows]).reshape(len(rows), d)
    returns = np.array([float(r[1 + d]) for r in rows])
    failed = np.array([bool(int(r[3 + d])) for r in rows])
    return PortfolioTrack(objective, assets, dates, weights, returns, failed)


def write_horse_race_csv(
    tracks: Sequence[PortfolioTrack], benchmark: Optional[tuple[str, np.ndarray]], path,
    header_lines: Sequence[str] = (),
) -> None:
    """Cumulative returns of each portfolio (and the benchmark) on the common dates."""
    dates = tracks[0].dates
    columns = [(PORTFOLIO_LABELS[t.objective], t.cumulative) for t in tracks]
    if benchmark is not None:
        name, bench = benchmark
        columns.append((name, np.expm1(np.cumsum(bench))))
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *(c[0] for c in columns)])
        for k in range(dates.size):
            writer.writerow([str(dates[k]), *(repr(float(c[1][k])) for c in columns)])
