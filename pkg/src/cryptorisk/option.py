"""European option pricing under a GARCH model with NIG innovations.

Physical model for the portfolio log return::

    r_t  = r + sigma_t eps_t - log M*(sigma_t)
    s2_t = alpha0 + alpha1 a_{t-1}^2 + beta1 s2_{t-1},   a_t = sigma_t eps_t

where ``eps_t ~ NIG(alpha, beta, delta, mu)`` are the standardized innovations of
the fitted ARMA-GARCH model.  Under the risk-neutral measure the NIG skew
parameter is Esscher-tilted, ``beta -> beta + tilt_t``, and ``M*(.)`` is the
moment generating function of the tilted innovation.  Subtracting
``log M*(sigma_t)`` makes ``exp(-r t) S_t`` a martingale exactly, whatever
tilt is used.

Two tilts are offered (``PricerConfig.tilt_scale``):

* ``"sqrt_sigma"``: ``tilt_t = sqrt(sigma_t) * theta`` with one ``theta``
  solving the martingale condition for the unscaled NIG;
* ``"sigma"``: ``tilt_t = sigma_t * theta_t`` where ``theta_t`` solves the
  condition for ``sigma_t * eps``; then ``log M*(sigma_t) = r`` and the
  return step reduces to ``sigma_t eps_t``.

Rates are per trading day and maturities are counted in trading days.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, special, stats

from . import garch
from . import rng as _rng
from .dist.nig import NigParams, draw_nig, fit_nig
from .errors import DomainError, FitError, NoMartingaleMeasureError, NoSolutionError

log = logging.getLogger(__name__)

TILT_SCALES = ("sqrt_sigma", "sigma")
TRADING_DAYS = 252
_INSET = 1e-9
_THETA_TOL = 1e-12


@dataclass(frozen=True)
class PricerConfig:
    maturity: int = 126
    rate: float = 0.02 / TRADING_DAYS  # per trading day
    n_paths: int = 10_000
    initial_capital: float = 100.0
    seed: int = 0
    tilt_scale: str = "sqrt_sigma"

    def __post_init__(self):
        if self.maturity < 1:
            raise DomainError("maturity must be at least one day")
        if self.n_paths < 2:
            raise DomainError("need at least two paths")
        if not self.initial_capital > 0:
            raise DomainError("initial capital must be positive")
        if self.tilt_scale not in TILT_SCALES:
            raise DomainError(f"tilt_scale must be one of {TILT_SCALES}")


@dataclass(frozen=True)
class EsscherState:
    """Risk-neutral NIG for one step: the physical law plus the tilt applied to ``beta``."""

    nig: NigParams
    theta: float

    @property
    def tilted(self) -> NigParams:
        return self.nig.tilted(self.theta)


# ---------------------------------------------------------------------------
# Esscher parameter


def _theta_residual(theta, alpha, beta, delta, mu, rate):
    # log M(theta + 1) - log M(theta) - r for NIG(alpha, beta, delta, mu)
    return (
        mu
        + delta * (np.sqrt(alpha**2 - (beta + theta) ** 2) - np.sqrt(alpha**2 - (beta + theta + 1.0) ** 2))
        - rate
    )


def _theta_bisect(alpha, beta, delta, mu, rate):
    """Vectorized bisection for the martingale Esscher parameter.

    The residual is strictly increasing on the admissible interval
    ``(-alpha - beta, alpha - beta - 1)`` and its range is ``mu +- delta sqrt(2 alpha - 1)``.
    """
    alpha, beta, delta, mu, rate = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (alpha, beta, delta, mu, rate)))
    if np.any(alpha <= 0.5):
        raise NoMartingaleMeasureError("NIG tail parameter alpha <= 1/2: the moment generating function at 1 is too narrow")
    lo = -alpha - beta + _INSET
    hi = alpha - beta - 1.0 - _INSET
    f_lo = _theta_residual(lo, alpha, beta, delta, mu, rate)
    f_hi = _theta_residual(hi, alpha, beta, delta, mu, rate)
    if np.any(f_lo > 0) or np.any(f_hi < 0):
        bound = float(np.max(delta * np.sqrt(2 * alpha - 1)))
        raise NoMartingaleMeasureError(
            f"rate outside the attainable range (mu +- {bound:.6g}): no Esscher parameter exists"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = _theta_residual(mid, alpha, beta, delta, mu, rate)
        up = f_mid < 0
        done = np.abs(f_mid) < _THETA_TOL
        # converged entries collapse onto their midpoint
        lo = np.where(done | up, mid, lo)
        hi = np.where(done | ~up, mid, hi)
        if np.all(hi - lo < 1e-15 * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def esscher_theta(nig: NigParams, rate: float, sigma_scale: float = 1.0) -> float:
    """Esscher parameter ``theta`` with ``M(theta + 1) / M(theta) = exp(rate)`` for ``sigma_scale * eps``."""
    p = nig.scaled(sigma_scale) if sigma_scale != 1.0 else nig
    return float(_theta_bisect(p.alpha, p.beta, p.delta, p.mu, rate))


# ---------------------------------------------------------------------------
# simulation


GarchInput = Union[garch.GarchParams, garch.GarchState]


def _start(model: GarchInput, initial_variance: Optional[float]):
    if isinstance(model, garch.GarchState):
        p = model.params
        s2 = garch.forecast_one_step(model).sigma_next ** 2
    else:
        p = model
        s2 = p.unconditional_variance if p.persistence < 1 else float(p.alpha0 / max(1e-12, 1 - p.persistence))
    if initial_variance is not None:
        s2 = float(initial_variance)
    if not (s2 > 0 and math.isfinite(s2)):
        raise DomainError("initial variance must be positive and finite")
    return p, s2


def simulate_log_returns(
    model: GarchInput,
    nig: NigParams,
    config: PricerConfig,
    record: Optional[Sequence[int]] = None,
    initial_variance: Optional[float] = None,
) -> np.ndarray:
    """Cumulative risk-neutral log returns at the steps in ``record`` (default: the maturity).

    Returns an ``n_paths x len(record)`` matrix.  Paths are simulated in
    fixed blocks with their own substreams, so the first ``n`` paths do not
    depend on ``n_paths``.
    """
    p, s2_start = _start(model, initial_variance)
    steps = sorted(set(int(k) for k in (record if record is not None else [config.maturity])))
    if steps[0] < 1:
        raise DomainError("maturities must be at least one day")
    horizon = steps[-1]
    col = {k: i for i, k in enumerate(steps)}
    rate = config.rate
    theta_fixed = esscher_theta(nig, rate) if config.tilt_scale == "sqrt_sigma" else None
    a, b, dl, m = nig.alpha, nig.beta, nig.delta, nig.mu

    def draw(g: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, len(steps)))
        s2 = np.full(size, s2_start)
        total = np.zeros(size)
        for t in range(1, horizon + 1):
            sig = np.sqrt(s2)
            if theta_fixed is not None:
                beta_star = b + np.sqrt(sig) * theta_fixed
            else:
                beta_star = b + sig * _theta_bisect(a / sig, b / sig, dl * sig, m * sig, rate)
            bad = (np.abs(beta_star) >= a) | (np.abs(beta_star + sig) >= a)
            if np.any(bad):
                worst = float(np.max(np.where(bad, sig, 0.0)))
                raise NoMartingaleMeasureError(
                    f"tilted skew leaves the NIG domain at step {t} (|beta*| or |beta* + sigma| >= alpha"
                    f" = {a:.4g}) on a path with daily volatility {worst:.4g}"
                )
            eps = draw_nig(g, a, beta_star, dl, m, size)
            gamma_star = np.sqrt(a * a - beta_star * beta_star)
            log_mgf = m * sig + dl * (gamma_star - np.sqrt(a * a - (beta_star + sig) ** 2))
            shock = sig * eps
            total += rate + shock - log_mgf
            s2 = np.maximum(p.alpha0 + p.alpha1 * shock * shock + p.beta1 * s2, garch.VARIANCE_FLOOR)
            if t in col:
                out[:, col[t]] = total
        return out

    return _rng.block_draws(_rng.seed_key(config.seed, _rng.stream_id("option")), config.n_paths, draw)


def simulate_risk_neutral_paths(
    model: GarchInput,
    nig: NigParams,
    config: PricerConfig,
    initial_variance: Optional[float] = None,
) -> np.ndarray:
    """Terminal portfolio values ``S_T`` under the Esscher measure."""
    logs = simulate_log_returns(model, nig, config, initial_variance=initial_variance)
    return config.initial_capital * np.exp(logs[:, 0])


# ---------------------------------------------------------------------------
# pricing


def _discounted(payoff: np.ndarray, rate: float, maturity: int) -> tuple[float, float]:
    disc = math.exp(-rate * maturity)
    price = disc * float(np.mean(payoff))
    se = disc * float(np.std(payoff, ddof=1)) / math.sqrt(payoff.size)
    return price, se


def price_call(terminals, strike: float, rate: float, maturity: int) -> tuple[float, float]:
    """Monte Carlo call price and its standard error."""
    s = np.asarray(terminals, dtype=float)
    return _discounted(np.maximum(s - strike, 0.0), rate, maturity)


def price_put(terminals, strike: float, rate: float, maturity: int) -> tuple[float, float]:
    s = np.asarray(terminals, dtype=float)
    return _discounted(np.maximum(strike - s, 0.0), rate, maturity)


def black_scholes(spot: float, strike: float, maturity_years: float, rate_annual: float, vol: float,
                  kind: str = "call") -> float:
    if vol <= 0 or maturity_years <= 0:
        fwd_intrinsic = spot - strike * math.exp(-rate_annual * maturity_years)
        return max(fwd_intrinsic, 0.0) if kind == "call" else max(-fwd_intrinsic, 0.0)
    sq = vol * math.sqrt(maturity_years)
    d1 = (math.log(spot / strike) + (rate_annual + 0.5 * vol * vol) * maturity_years) / sq
    d2 = d1 - sq
    disc = strike * math.exp(-rate_annual * maturity_years)
    if kind == "call":
        return spot * special.ndtr(d1) - disc * special.ndtr(d2)
    return disc * special.ndtr(-d2) - spot * special.ndtr(-d1)


def implied_vol(price: float, spot: float, strike: float, maturity: int, rate: float, kind: str = "call") -> float:
    """Annualised Black-Scholes volatility from a price; ``maturity`` in days, ``rate`` per day."""
    if kind not in ("call", "put"):
        raise DomainError("kind must be 'call' or 'put'")
    years = maturity / TRADING_DAYS
    r_ann = rate * TRADING_DAYS
    disc_k = strike * math.exp(-r_ann * years)
    lower = max(spot - disc_k, 0.0) if kind == "call" else max(disc_k - spot, 0.0)
    upper = spot if kind == "call" else disc_k
    scale = max(spot, strike)
    if price < lower - 1e-12 * scale or price >= upper:
        raise NoSolutionError(f"{kind} price {price:.6g} outside the no-arbitrage bounds [{lower:.6g}, {upper:.6g})")
    if price <= lower + 1e-14 * scale:
        return 0.0

    def f(v):
        return black_scholes(spot, strike, years, r_ann, v, kind) - price

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise NoSolutionError("implied volatility above 1000")
    vol = optimize.brentq(f, 1e-12, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    if abs(f(vol)) > 1e-8 * max(1.0, price):
        raise NoSolutionError(f"implied volatility root residual {f(vol):.3g}")
    return float(vol)


@dataclass(frozen=True)
class PriceSurface:
    strikes: np.ndarray
    maturities: np.ndarray
    calls: np.ndarray  # maturities x strikes
    puts: np.ndarray
    call_se: np.ndarray
    put_se: np.ndarray
    implied_vols: np.ndarray  # NaN where no implied volatility exists
    spot: float
    rate: float


def build_surface(
    model: GarchInput,
    nig: NigParams,
    strikes: Sequence[float],
    maturities: Sequence[int],
    config: PricerConfig,
) -> PriceSurface:
    """Prices every (strike, maturity) pair on one set of simulated paths.

    Implied volatilities are taken from the out-of-the-money option (puts
    below the forward, calls at or above it) and are inverted against the
    simulated forward ``mean(S_T)``.  Put-call parity then holds exactly in
    Black-Scholes terms, so call and put volatilities agree at every strike
    and Monte Carlo drift error does not put a kink into the smile.
    """
    k = np.asarray(strikes, dtype=float)
    mats = np.asarray(sorted(set(int(t) for t in maturities)))
    if np.any(k <= 0):
        raise DomainError("strikes must be positive")
    logs = simulate_log_returns(model, nig, config, record=mats)
    s0, r = config.initial_capital, config.rate
    shape = (mats.size, k.size)
    calls, puts, cse, pse, ivs = (np.empty(shape) for _ in range(5))
    for i, t in enumerate(mats):
        st = s0 * np.exp(logs[:, i])
        fwd = float(np.mean(st))
        spot_eff = fwd * math.exp(-r * t)
        for j, strike in enumerate(k):
            calls[i, j], cse[i, j] = price_call(st, strike, r, t)
            puts[i, j], pse[i, j] = price_put(st, strike, r, t)
            kind, price = ("put", puts[i, j]) if strike < fwd else ("call", calls[i, j])
            try:
                ivs[i, j] = implied_vol(price, spot_eff, strike, int(t), r, kind)
            except NoSolutionError as exc:
                log.info("no implied volatility at T=%d K=%g: %s", t, strike, exc)
                ivs[i, j] = math.nan
    return PriceSurface(k, mats, calls, puts, cse, pse, ivs, s0, r)


def write_surface_csv(surface: PriceSurface, path, header_lines: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["T", "K", "call", "put", "call_se", "put_se", "implied_vol"])
        for i, t in enumerate(surface.maturities):
            for j, strike in enumerate(surface.strikes):
                writer.writerow([
                    int(t), repr(float(strike)),
                    *(repr(float(m[i, j])) for m in (surface.calls, surface.puts, surface.call_se, surface.put_se)),
                    "" if math.isnan(surface.implied_vols[i, j]) else repr(float(surface.implied_vols[i, j])),
                ])


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class PricingModel:
    garch: garch.GarchState
    nig: NigParams
    ks_statistic: float
    ks_pvalue: float


def fit_pricing_model(portfolio_returns) -> PricingModel:
    """Gaussian quasi-ML ARMA-GARCH, then an NIG fit to its standardized innovations.

    The Kolmogorov-Smirnov statistic of the innovations against the fitted
    NIG is reported for information; it does not gate the fit.
    """
    state = garch.fit_arma_garch(np.asarray(portfolio_returns, dtype=float), "gaussian")
    eps = state.innovations
    try:
        nig = fit_nig(eps)
    except FitError as exc:
        log.warning("NIG maximum likelihood failed (%s); using the moment fit", exc)
        nig = exc.fallback
    ks = stats.kstest(eps, stats.norminvgauss(nig.alpha * nig.delta, nig.beta * nig.delta, loc=nig.mu, scale=nig.delta).cdf)
    return PricingModel(state, nig, float(ks.statistic), float(ks.pvalue))
