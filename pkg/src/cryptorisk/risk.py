"""Tail-risk measures, risk-adjusted return ratios and Euler risk budgets.

Conventions used throughout the package:

* returns are signed, risk measures are reported as positive losses;
* VaR at level ``alpha`` is minus the ``k = ceil(alpha N)``-th smallest outcome;
* CVaR is the mean loss over the ``m = floor(alpha N)`` worst outcomes;
* ranking ties are broken by scenario index (stable sort).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InsufficientDataError, ShapeError, SingularMatrixError

DEFAULT_ALPHA = 0.01
TRADING_DAYS = 252
# guards ceil/floor of alpha*N against representation error (0.07*100 = 7.000000000000001)
_COUNT_EPS = 1e-9


def _check_level(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"tail level must lie in (0, 1), got {alpha}")


def var_index(alpha: float, n: int) -> int:
    """1-based order statistic used for VaR: ``ceil(alpha n)``."""
    return max(1, math.ceil(alpha * n - _COUNT_EPS))


def tail_count(alpha: float, n: int) -> int:
    """Number of worst outcomes averaged by CVaR: ``floor(alpha n)``."""
    return math.floor(alpha * n + _COUNT_EPS)


def _outcomes(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise InsufficientDataError("no outcomes")
    return x


def var(outcomes, alpha: float = DEFAULT_ALPHA) -> float:
    _check_level(alpha)
    x = _outcomes(outcomes)
    k = var_index(alpha, x.size)
    return float(-np.partition(x, k - 1)[k - 1])


def tail_indices(outcomes, alpha: float) -> np.ndarray:
    """Indices of the ``floor(alpha N)`` worst outcomes, ties broken by index."""
    _check_level(alpha)
    x = _outcomes(outcomes)
    m = tail_count(alpha, x.size)
    if m < 1:
        raise InsufficientDataError(
            f"alpha * N = {alpha * x.size:g} < 1: the tail holds no complete observation"
        )
    return np.argsort(x, kind="stable")[:m]


def cvar(outcomes, alpha: float = DEFAULT_ALPHA) -> float:
    x = _outcomes(outcomes)
    tail = x[tail_indices(x, alpha)]
    # correctly rounded sum, so the value does not depend on summation order;
    # a mean never exceeds its largest term, the clamp removes division rounding
    return float(-min(math.fsum(tail) / tail.size, tail.max()))


# ---------------------------------------------------------------------------
# risk-adjusted return


def mdd(values) -> float:
    """Largest peak-to-trough decline of a wealth path, as a fraction of the peak."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    if np.any(v <= 0):
        raise DomainError("wealth values must be positive")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def wealth_curve(log_returns, initial: float = 1.0) -> np.ndarray:
    r = np.asarray(log_returns, dtype=float)
    return initial * np.exp(np.concatenate([[0.0], np.cumsum(r)]))


def daily_rate_from_annual_pct(yield_pct):
    """Annual percentage yield -> daily simple rate (``/ 252 / 100``)."""
    return np.asarray(yield_pct, dtype=float) / TRADING_DAYS / 100.0


def _risk_free(returns: np.ndarray, risk_free) -> np.ndarray:
    rf = np.asarray(risk_free, dtype=float)
    if rf.ndim == 0:
        return np.full(returns.shape, float(rf))
    if rf.shape != returns.shape:
        raise ShapeError(f"risk-free series shape {rf.shape} does not match returns {returns.shape}")
    return rf


def sharpe(returns, risk_free=0.0, annualize: bool = False) -> float:
    """``(mean(R) - mean(R_f)) / std(R)`` over the window; daily unless ``annualize``."""
    r = _outcomes(returns)
    rf = _risk_free(r, risk_free)
    if r.size < 2:
        raise InsufficientDataError("need at least two returns")
    vol = float(np.std(r, ddof=1))
    if not vol > 0:
        raise DomainError("zero return volatility: Sharpe ratio undefined")
    ratio = (float(np.mean(r)) - float(np.mean(rf))) / vol
    return ratio * math.sqrt(TRADING_DAYS) if annualize else ratio


def m2(returns, risk_free=0.0, benchmark_vol: float = 0.0) -> float:
    """Modigliani M2: ``Sharpe * sigma_M + R_f``."""
    r = _outcomes(returns)
    rf = _risk_free(r, risk_free)
    return sharpe(r, rf) * float(benchmark_vol) + float(np.mean(rf))


def rachev(returns, risk_free=0.0, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_ALPHA) -> float:
    """``CVaR_beta(R_f - R) / CVaR_alpha(R - R_f)``: upper-tail gain over lower-tail loss."""
    r = _outcomes(returns)
    excess = r - _risk_free(r, risk_free)
    denom = cvar(excess, alpha)
    if denom == 0:
        raise DomainError("lower-tail CVaR of excess returns is zero: Rachev ratio undefined")
    return cvar(-excess, beta) / denom


# ---------------------------------------------------------------------------
# risk budgeting


@dataclass(frozen=True)
class RiskContributionReport:
    measure: str  # "volatility" | "cvar"
    assets: tuple[str, ...]
    per_asset: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.per_asset))

    @property
    def per_asset_pct(self) -> np.ndarray:
        return 100.0 * self.per_asset / self.total


def _assets(names, d: int) -> tuple[str, ...]:
    if names is None:
        return tuple(f"asset{i + 1}" for i in range(d))
    if len(names) != d:
        raise ShapeError(f"{len(names)} asset names for {d} weights")
    return tuple(names)


def vol_risk_contributions(weights, cov, assets: Sequence[str] = None) -> RiskContributionReport:
    """``RC_i = w_i (Sigma w)_i / sqrt(w' Sigma w)``; contributions add up to portfolio volatility."""
    w = np.asarray(weights, dtype=float).ravel()
    s = np.atleast_2d(np.asarray(cov, dtype=float))
    if s.shape != (w.size, w.size):
        raise ShapeError(f"covariance shape {s.shape} does not match {w.size} weights")
    if not np.allclose(s, s.T, rtol=1e-10, atol=1e-15):
        raise SingularMatrixError("covariance must be symmetric")
    if np.linalg.eigvalsh(s).min() <= 0:
        raise SingularMatrixError("covariance must be positive definite")
    sw = s @ w
    vol = math.sqrt(float(w @ sw))
    return RiskContributionReport("volatility", _assets(assets, w.size), w * sw / vol)


def cvar_risk_contributions(
    weights, scenarios, alpha: float = DEFAULT_ALPHA, assets: Sequence[str] = None
) -> RiskContributionReport:
    """Scenario Euler decomposition of CVaR.

    ``RC_i = w_i * mean(-r_si)`` over the scenarios in the portfolio's CVaR
    tail, so the contributions add up to ``cvar(scenarios @ w)``.
    """
    w = np.asarray(weights, dtype=float).ravel()
    x = np.asarray(scenarios, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != w.size:
        raise ShapeError(f"scenarios have {x.shape[1]} columns for {w.size} weights")
    tail = tail_indices(x @ w, alpha)
    return RiskContributionReport("cvar", _assets(assets, w.size), w * -x[tail].mean(axis=0))


def write_risk_budget_csv(reports: Sequence[tuple[str, RiskContributionReport]], path,
                          header_lines: Sequence[str] = ()) -> None:
    """Rows ``<label>`` and ``<label>(%)`` per report, one column per asset."""
    assets = reports[0][1].assets
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Method", *assets])
        for label, rep in reports:
            writer.writerow([label, *(f"{v:.6g}" for v in rep.per_asset)])
            writer.writerow([f"{label}(%)", *(f"{v:.4f}" for v in rep.per_asset_pct)])

