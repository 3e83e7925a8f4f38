"""Rolling Monte Carlo backtest of one-day VaR / CVaR forecasts.

Each out-of-sample day the per-asset ARMA-GARCH models are refitted on the
trailing window, a joint innovation model is fitted to the filtered
innovations, ``N`` one-step scenarios are simulated and the portfolio VaR and
CVaR forecasts are compared with the realised portfolio return.

Exceedance counts are judged with a Basel-style traffic light and an exact
one-sided binomial test.  CVaR exceedances are expected at rate ``alpha / 2``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import garch, risk
from . import rng as _rng
from .dist import JointModelSpec, fit_joint, sample_joint
from .errors import CryptoRiskError, DomainError, InsufficientDataError
from .marketdata import ReturnPanel

log = logging.getLogger(__name__)

GREEN_LIMIT = 0.95
# Zone edge between yellow and red on P(X <= failures).  Calibrated so that
# 15 exceedances in 455 days at alpha = 0.01 (P = 0.99998) stays yellow while
# 159 and 224 are red; the textbook 0.9999 edge would turn 15 red.
RED_LIMIT = 0.99999
BINOMIAL_SIGNIFICANCE = 0.05
MIN_WINDOW = 100
MIN_SCENARIOS = 1000


def traffic_light(observations: int, alpha: float, failures: int,
                  green_limit: float = GREEN_LIMIT, red_limit: float = RED_LIMIT) -> str:
    """Zone from the binomial CDF ``P(X <= failures)``, ``X ~ Bin(observations, alpha)``."""
    if failures > observations or failures < 0:
        raise DomainError("failures must lie in [0, observations]")
    p = float(stats.binom.cdf(failures, observations, alpha))
    if p <= green_limit:
        return "green"
    if p <= red_limit:
        return "yellow"
    return "red"


def binomial_test(observations: int, alpha: float, failures: int,
                  significance: float = BINOMIAL_SIGNIFICANCE) -> tuple[str, float]:
    """Exact one-sided test for too many failures: reject when ``P(X >= failures) < significance``."""
    if failures > observations or failures < 0:
        raise DomainError("failures must lie in [0, observations]")
    p_value = 1.0 if failures == 0 else float(stats.binom.sf(failures - 1, observations, alpha))
    return ("reject" if p_value < significance else "accept"), p_value


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 252
    scenarios: int = 10_000
    alpha: float = risk.DEFAULT_ALPHA
    model: JointModelSpec = field(default_factory=lambda: JointModelSpec("mvt", nu=5.0))
    weights: Optional[tuple[float, ...]] = None  # None -> equal weights
    seed: int = 0
    refit_stride: int = 1
    warm_start: bool = True

    def __post_init__(self):
        if self.window < MIN_WINDOW:
            raise DomainError(f"window must be at least {MIN_WINDOW}")
        if self.scenarios < MIN_SCENARIOS:
            raise DomainError(f"need at least {MIN_SCENARIOS} scenarios")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if self.refit_stride < 1:
            raise DomainError("refit_stride must be >= 1")


@dataclass(frozen=True)
class BacktestReport:
    observations: int
    failures_var: int
    failures_cvar: int
    alpha: float
    missing: int = 0

    @property
    def expected_var(self) -> float:
        return self.alpha * self.observations

    @property
    def expected_cvar(self) -> float:
        return self.alpha / 2.0 * self.observations

    @property
    def ratio_var(self) -> float:
        return self.failures_var / self.expected_var if self.expected_var else math.nan

    @property
    def ratio_cvar(self) -> float:
        return self.failures_cvar / self.expected_cvar if self.expected_cvar else math.nan

    @property
    def traffic_light_var(self) -> str:
        return traffic_light(self.observations, self.alpha, self.failures_var)

    @property
    def traffic_light_cvar(self) -> str:
        return traffic_light(self.observations, self.alpha / 2.0, self.failures_cvar)

    @property
    def binomial_var(self) -> str:
        return binomial_test(self.observations, self.alpha, self.failures_var)[0]

    @property
    def binomial_cvar(self) -> str:
        return binomial_test(self.observations, self.alpha / 2.0, self.failures_cvar)[0]

    def rows(self) -> list[tuple[str, str]]:
        """Table rows as ``(label, formatted value)``."""
        out = []
        for name, fails, expected, ratio, zone, test in (
            ("VaR", self.failures_var, self.expected_var, self.ratio_var,
             self.traffic_light_var, self.binomial_var),
            ("CVaR", self.failures_cvar, self.expected_cvar, self.ratio_cvar,
             self.traffic_light_cvar, self.binomial_cvar),
        ):
            out += [
                (f"{name} Observations", str(self.observations)),
                (f"{name} Failures", str(fails)),
                (f"{name} Expected", f"{expected:g}"),
                (f"{name} Ratio", format_ratio(ratio)),
                (f"{name} Missing", str(self.missing)),
                (f"{name} Traffic Light", zone),
                (f"{name} Binomial Test", test),
            ]
        return out


def format_ratio(ratio: float) -> str:
    """Two-decimal ratio; exact zero prints as ``0``."""
    if ratio == 0:
        return "0"
    return f"{round(ratio, 2):.2f}"


@dataclass(frozen=True)
class TraceRow:
    date: np.datetime64
    realized: float
    var: float
    cvar: float

    @property
    def var_failure(self) -> bool:
        return self.realized < -self.var

    @property
    def cvar_failure(self) -> bool:
        return self.realized < -self.cvar


# (trailing window returns T x d, roll index) -> (VaR, CVaR) of the portfolio
Forecaster = Callable[[np.ndarray, int], tuple[float, float]]


class _RollingFitter:
    """Per-asset GARCH fits for one innovation family, warm-started roll to roll."""

    def __init__(self, family: str, d: int, stride: int, warm_start: bool):
        self.family = family
        self.stride = stride
        self.warm_start = warm_start
        self.params: list[Optional[garch.GarchParams]] = [None] * d
        self.cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def states(self, window_returns: np.ndarray, roll: int):
        if roll in self.cache:
            return self.cache[roll]
        refit = roll % self.stride == 0 or any(p is None for p in self.params)
        mus, sigmas, eps = [], [], []
        for j in range(window_returns.shape[1]):
            col = window_returns[:, j]
            if refit:
                start = self.params[j] if self.warm_start else None
                state = garch.fit_arma_garch(col, self.family, start=start)
                self.params[j] = state.params
            else:
                state = garch.filter_innovations(self.params[j], col)
            fc = garch.forecast_one_step(state)
            mus.append(fc.mu_next)
            sigmas.append(fc.sigma_next)
            eps.append(state.innovations)
        out = (np.array(mus), np.array(sigmas), np.column_stack(eps))
        self.cache = {roll: out}
        return out


def _equal_or_given(weights, d: int) -> np.ndarray:
    if weights is None:
        return np.full(d, 1.0 / d)
    w = np.asarray(weights, dtype=float)
    if w.size != d:
        raise DomainError(f"{w.size} weights for {d} assets")
    return w


def run_backtest_grid(
    panel: ReturnPanel,
    configs: Sequence[BacktestConfig],
) -> list[tuple[Optional[BacktestReport], list[TraceRow], Optional[str]]]:
    """Backtest several model configurations on shared per-roll GARCH fits.

    All configs must agree on window, weights, seed and refit policy.  Each
    result is ``(report, trace, error)``; a model that fails outright gets
    ``report = None`` and an error message instead of aborting the grid.
    """
    if not configs:
        return []
    base = configs[0]
    for c in configs[1:]:
        if (c.window, c.weights, c.seed, c.refit_stride, c.warm_start) != (
            base.window, base.weights, base.seed, base.refit_stride, base.warm_start
        ):
            raise DomainError("grid configs must share window, weights, seed and refit policy")
    r = panel.returns
    t_total, d = r.shape
    if t_total < base.window + 1:
        raise InsufficientDataError(f"panel has {t_total} rows, need more than window={base.window}")
    w = _equal_or_given(base.weights, d)
    fitters = {
        fam: _RollingFitter(fam, d, base.refit_stride, base.warm_start)
        for fam in {c.model.innovation_family for c in configs}
    }
    traces: list[list[TraceRow]] = [[] for _ in configs]
    missing = [0] * len(configs)
    errors: list[Optional[str]] = [None] * len(configs)

    for roll, t in enumerate(range(base.window, t_total)):
        window_returns = r[t - base.window : t]
        realized = float(r[t] @ w)
        for k, cfg in enumerate(configs):
            try:
                mu, sigma, eps = fitters[cfg.model.innovation_family].states(window_returns, roll)
                joint = fit_joint(cfg.model, eps)
                key = _rng.seed_key(cfg.seed, _rng.stream_id("backtest"), roll)
                draws = sample_joint(joint, cfg.scenarios, key)
                outcomes = (mu + sigma * draws) @ w
                v, cv = risk.var(outcomes, cfg.alpha), risk.cvar(outcomes, cfg.alpha)
            except (CryptoRiskError, np.linalg.LinAlgError, FloatingPointError) as exc:
                missing[k] += 1
                errors[k] = f"{type(exc).__name__}: {exc}"
                log.warning("roll %d (%s) %s: %s", roll, panel.dates[t], cfg.model.label, exc)
                continue
            traces[k].append(TraceRow(panel.dates[t], realized, v, cv))

    results = []
    for k, cfg in enumerate(configs):
        trace = traces[k]
        if not trace:
            results.append((None, trace, errors[k] or "no successful rolls"))
            continue
        report = BacktestReport(
            observations=len(trace),
            failures_var=sum(row.var_failure for row in trace),
            failures_cvar=sum(row.cvar_failure for row in trace),
            alpha=cfg.alpha,
            missing=missing[k],
        )
        results.append((report, trace, None))
    return results


def run_backtest(
    panel: ReturnPanel,
    config: BacktestConfig,
    forecaster: Optional[Forecaster] = None,
) -> tuple[BacktestReport, list[TraceRow]]:
    """Backtest one model.  ``forecaster`` replaces the GARCH + joint-model forecast."""
    if forecaster is None:
        report, trace, error = run_backtest_grid(panel, [config])[0]
        if report is None:
            raise InsufficientDataError(f"every roll failed: {error}")
        return report, trace

    r = panel.returns
    if r.shape[0] < config.window + 1:
        raise InsufficientDataError("panel shorter than window + 1")
    w = _equal_or_given(config.weights, r.shape[1])
    trace, missing = [], 0
    for roll, t in enumerate(range(config.window, r.shape[0])):
        try:
            v, cv = forecaster(r[t - config.window : t], roll)
        except CryptoRiskError as exc:
            missing += 1
            log.warning("roll %d: %s", roll, exc)
            continue
        trace.append(TraceRow(panel.dates[t], float(r[t] @ w), float(v), float(cv)))
    report = BacktestReport(
        observations=len(trace),
        failures_var=sum(row.var_failure for row in trace),
        failures_cvar=sum(row.cvar_failure for row in trace),
        alpha=config.alpha,
        missing=missing,
    )
    return report, trace


# ---------------------------------------------------------------------------
# export

_GROUP = {"gaussian": "Gaussian", "student_t": "Student's t"}
_JOINT = {"mvt": "Multi t", "mvg": "MVG", "tcopula": "t copula", "gaussian": "Independent", "student_t": "Independent"}


def _parameter_label(spec: JointModelSpec) -> str:
    if spec.kind in ("mvt", "student_t"):
        return f"nu = {spec.nu:g}"
    if spec.kind == "tcopula":
        return f"w_s = {spec.w_s:g}"
    if spec.kind == "mvg":
        return "nu_0"
    return "-"


def write_backtest_table(
    columns: Sequence[tuple[JointModelSpec, Optional[BacktestReport], Optional[str]]],
    path,
    header_lines: Sequence[str] = (),
) -> None:
    """One column per model; rows follow the usual backtest summary layout."""
    labels = [spec.label for spec, _, _ in columns]
    row_names = [name for name, _ in BacktestReport(1, 0, 0, 0.5).rows()]
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Variable", *labels])
        writer.writerow(["Innovation Distribution", *(_GROUP[s.innovation_family] for s, _, _ in columns)])
        writer.writerow(["Joint Distribution", *(_JOINT[s.kind] for s, _, _ in columns)])
        writer.writerow(["Parameter", *(_parameter_label(s) for s, _, _ in columns)])
        values = []
        for spec, report, error in columns:
            if report is None:
                values.append({name: "error" for name in row_names})
            else:
                values.append(dict(report.rows()))
        for name in row_names:
            writer.writerow([name, *(v[name] for v in values)])
        if any(err for _, rep, err in columns if rep is None):
            for spec, rep, err in columns:
                if rep is None:
                    fh.write(f"# {spec.label} failed: {err}\n")


def write_trace_csv(trace: Sequence[TraceRow], path, header_lines: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "realized", "neg_var", "neg_cvar", "var_failure", "cvar_failure"])
        for row in trace:
            writer.writerow([
                str(row.date), repr(row.realized), repr(-row.var), repr(-row.cvar),
                int(row.var_failure), int(row.cvar_failure),
            ])
