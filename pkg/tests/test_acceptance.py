"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL criterion N: ...`` line that is printed
in the pytest terminal summary (and immediately when run with ``-s``).
"""
import filecmp
import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from cryptorisk import backtest, cli, garch, option, optimize, risk
from cryptorisk.dist import MvtParams, NigParams, nig_log_mgf, sample_mvt
from cryptorisk.option import _theta_residual

from conftest import ACCEPTANCE_RESULTS, SAMPLE, make_panel

# reference labels for 455 observations at alpha = 0.01, in table column order
TABLE_VAR_FAILURES = [7, 8, 11, 159, 224, 15, 8]
TABLE_ZONES = ["green", "yellow", "yellow", "red", "red", "yellow", "yellow"]
TABLE_DECISIONS = ["accept", "accept", "reject", "reject", "reject", "reject", "accept"]
TABLE_VAR_RATIOS = ["1.54", "1.76", "2.42", "34.95", "49.23", "3.30", "1.76"]
TABLE_CVAR_FAILURES = [0, 2, 3, 157, 225, 13, 6]
TABLE_CVAR_RATIOS = ["0", "0.88", "1.32", "69.01", "98.90", "5.71", "2.64"]
# reference values for the min-CVaR portfolio; data-vintage dependent, reported only
REFERENCE_MIN_CVAR = {"MDD": 0.7307, "Sharpe ratio": 0.0502, "Rachev ratio": 1.7588}


def record(number: int, ok: bool, detail: str, elapsed: float) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} ({elapsed:.1f} s)"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    assert ok, line


def test_criterion_01_zone_calibration():
    t0 = time.perf_counter()
    zones = [backtest.traffic_light(455, 0.01, f) for f in TABLE_VAR_FAILURES]
    decisions = [backtest.binomial_test(455, 0.01, f)[0] for f in TABLE_VAR_FAILURES]
    elapsed = time.perf_counter() - t0
    ok = zones == TABLE_ZONES and decisions == TABLE_DECISIONS and elapsed < 1.0
    record(1, ok, f"zones {zones}, binomial {decisions}", elapsed)


def test_criterion_02_ratio_arithmetic():
    t0 = time.perf_counter()
    var_ratios = [dict(backtest.BacktestReport(455, f, 0, 0.01).rows())["VaR Ratio"] for f in TABLE_VAR_FAILURES]
    cvar_ratios = [dict(backtest.BacktestReport(455, 0, f, 0.01).rows())["CVaR Ratio"] for f in TABLE_CVAR_FAILURES]
    ok = var_ratios == TABLE_VAR_RATIOS and cvar_ratios == TABLE_CVAR_RATIOS
    record(2, ok, f"VaR ratios {var_ratios}, CVaR ratios {cvar_ratios}", time.perf_counter() - t0)


def _brute_force(x, alpha):
    ordered = sorted(float(v) for v in x)
    n = len(ordered)
    k = max(1, math.ceil(round(alpha * n, 9)))
    m = math.floor(round(alpha * n, 9))
    var = -ordered[k - 1]
    cvar = -math.fsum(ordered[:m]) / m if m >= 1 else None
    return var, cvar


def test_criterion_03_estimator_oracle():
    t0 = time.perf_counter()
    g = np.random.default_rng(3)
    mismatches = dominance = 0
    for i in range(1000):
        n = int(g.integers(1, 201))
        alpha = float(g.choice([0.01, 0.025, 0.05, 0.1, 0.2, 0.5]))
        x = g.integers(-20, 20, n).astype(float) if i % 4 == 0 else g.standard_t(3, n)
        v_ref, c_ref = _brute_force(x, alpha)
        mismatches += risk.var(x, alpha) != v_ref
        if c_ref is not None:
            c = risk.cvar(x, alpha)
            mismatches += c != c_ref
            dominance += c < risk.var(x, alpha)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and dominance == 0 and elapsed < 10
    record(3, ok, f"{mismatches} mismatches, {dominance} CVaR < VaR cases in 1000 samples", elapsed)


def test_criterion_04_euler_adding_up():
    t0 = time.perf_counter()
    g = np.random.default_rng(4)
    vol_err = cvar_err = 0.0
    for _ in range(100):
        d = int(g.integers(2, 11))
        a = g.standard_normal((d, d))
        cov = a @ a.T + 0.05 * np.eye(d)
        w = g.dirichlet(np.ones(d))
        rep = risk.vol_risk_contributions(w, cov)
        vol_err = max(vol_err, abs(rep.total - math.sqrt(w @ cov @ w)))
        x = g.standard_t(4, (1000, d)) @ a.T * 0.01
        crep = risk.cvar_risk_contributions(w, x, 0.01)
        cvar_err = max(cvar_err, abs(crep.total - risk.cvar(x @ w, 0.01)))
    elapsed = time.perf_counter() - t0
    ok = vol_err < 1e-10 and cvar_err < 1e-12 and elapsed < 10
    record(4, ok, f"max volatility gap {vol_err:.2e}, max CVaR gap {cvar_err:.2e}", elapsed)


def test_criterion_05_optimizer_oracles():
    t0 = time.perf_counter()
    g = np.random.default_rng(5)
    closed_err = 0.0
    for _ in range(10):
        d = int(g.integers(2, 8))
        x = g.standard_normal((4000, d)) @ g.standard_normal((d, d))
        s = np.cov(x, rowvar=False)
        inv = np.linalg.solve(s, np.ones(d))
        w = optimize.min_variance_weights(x, (-np.inf, np.inf)).weights
        closed_err = max(closed_err, float(np.max(np.abs(w - inv / inv.sum()))))
    grid = np.arange(101) / 100
    pairs = [(a, b) for a, b in itertools.product(grid, grid) if a + b <= 1 + 1e-12]
    grid_gap = 0.0
    for _ in range(5):
        x = g.standard_t(4, (50, 3)) * [0.01, 0.02, 0.03] + g.normal(0, 0.002, 3)
        lp = optimize.min_cvar_weights(x, 0.1).risk
        best = min(risk.cvar(x @ np.array([a, b, 1 - a - b]), 0.1) for a, b in pairs)
        grid_gap = max(grid_gap, abs(lp - best))
    elapsed = time.perf_counter() - t0
    ok = closed_err < 1e-6 and grid_gap < 1e-4 and elapsed < 60
    record(5, ok, f"closed-form gap {closed_err:.2e}, LP vs grid gap {grid_gap:.2e}", elapsed)


def test_criterion_06_garch_recovery():
    t0 = time.perf_counter()
    true = garch.GarchParams(0.0, 0.5, -0.3, 1e-6, 0.10, 0.85)
    worst = {}
    for seed in range(5):
        eps = np.random.default_rng(seed).standard_normal(20_500)
        p = garch.fit_arma_garch(garch.simulate_garch(true, eps)).params
        for name in ("phi1", "theta1", "alpha0", "alpha1", "beta1"):
            err = abs(getattr(p, name) / getattr(true, name) - 1)
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - t0
    ok = all(v < (0.25 if k == "alpha0" else 0.10) for k, v in worst.items()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.1%}" for k, v in worst.items())
    record(6, ok, f"worst relative errors over 5 seeds: {detail}", elapsed)


COVERAGE_PARAMS = [
    garch.GarchParams(0.0, 0.1, 0.0, 2e-5, 0.08, 0.88),
    garch.GarchParams(0.0, 0.0, 0.0, 4e-5, 0.10, 0.85),
]


def _coverage_panel(seed, n_days):
    nu = 5.0
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    # unit-variance multivariate t innovations drive Gaussian-quasi-likelihood GARCH margins
    eps = sample_mvt(MvtParams(nu, [0.0, 0.0], (nu - 2) / nu * corr), 500 + n_days, 1000 + seed)
    r = np.column_stack([garch.simulate_garch(p, eps[:, j]) for j, p in enumerate(COVERAGE_PARAMS)])
    return make_panel(r)


def test_criterion_07_backtest_coverage():
    t0 = time.perf_counter()
    lo, hi = stats.binom.ppf([0.025, 0.975], 455, 0.01)
    counts = []
    for seed in range(20):
        panel = _coverage_panel(seed, 252 + 455)
        rep, _ = backtest.run_backtest(panel, backtest.BacktestConfig(window=252, scenarios=2000, seed=seed))
        assert rep.observations == 455
        counts.append(rep.failures_var)
    inside = sum(lo <= c <= hi for c in counts)
    elapsed = time.perf_counter() - t0
    ok = inside >= 18 and elapsed < 900
    record(7, ok, f"{inside}/20 runs inside [{lo:g}, {hi:g}]; failures {counts}", elapsed)


@pytest.fixture(scope="module")
def pricing_model():
    """NIG-GARCH fitted to the minimum-variance portfolio of the bundled sample assets."""
    from cryptorisk import marketdata, optimize

    series = [marketdata.load_prices(SAMPLE / f"{a}.csv", asset_id=a)
              for a in ("BTC", "ETH", "XRP", "BCH", "EOS", "LTC", "BNB")]
    returns = marketdata.align_panel(series).returns
    weights = optimize.min_variance_weights(returns).weights
    return option.fit_pricing_model(returns @ weights)


def test_criterion_08_esscher_martingale(pricing_model):
    t0 = time.perf_counter()
    nig, rate = pricing_model.nig, 0.02 / 252
    worst_eq = worst_mgf = 0.0
    for sig in (1.0, 0.5, 2.0):
        scaled = nig.scaled(sig)
        th = option.esscher_theta(nig, rate, sigma_scale=sig)
        worst_eq = max(worst_eq, abs(float(_theta_residual(th, scaled.alpha, scaled.beta, scaled.delta, scaled.mu, rate))))
        worst_mgf = max(worst_mgf, abs(float(nig_log_mgf(scaled, th + 1) - nig_log_mgf(scaled, th)) - rate))
    cfg = option.PricerConfig(maturity=126, n_paths=10_000, rate=rate)
    s_t = option.simulate_risk_neutral_paths(pricing_model.garch, nig, cfg)
    disc = math.exp(-rate * 126) * s_t
    se = disc.std(ddof=1) / math.sqrt(disc.size)
    gap = abs(disc.mean() - 100.0)
    elapsed = time.perf_counter() - t0
    ok = worst_eq < 1e-12 and worst_mgf < 1e-10 and gap < 3 * se and elapsed < 120
    record(8, ok, f"theta residual {worst_eq:.1e}, MGF gap {worst_mgf:.1e}, "
                  f"discounted mean {disc.mean():.3f} (SE {se:.3f})", elapsed)


def test_criterion_09_parity_and_shape(pricing_model):
    t0 = time.perf_counter()
    rate = 0.02 / 252
    strikes = np.arange(80.0, 121.0, 5.0)
    cfg = option.PricerConfig(n_paths=10_000, rate=rate, seed=9)
    surf = option.build_surface(pricing_model.garch, pricing_model.nig, strikes, [21, 126], cfg)
    logs = option.simulate_log_returns(pricing_model.garch, pricing_model.nig, cfg, record=[21, 126])
    parity = 0.0
    for i, t in enumerate(surf.maturities):
        s_t = 100 * np.exp(logs[:, i])
        rhs = math.exp(-rate * t) * (s_t.mean() - strikes)
        parity = max(parity, float(np.max(np.abs(surf.calls[i] - surf.puts[i] - rhs))))
    monotone = bool(np.all(np.diff(surf.calls, axis=1) <= 0))
    second = surf.calls[:, :-2] - 2 * surf.calls[:, 1:-1] + surf.calls[:, 2:]
    se2 = surf.call_se[:, :-2] + 2 * surf.call_se[:, 1:-1] + surf.call_se[:, 2:]
    convex = bool(np.all(second >= -2 * se2))
    k = list(strikes)
    iv = surf.implied_vols
    curv = iv[:, k.index(90.0)] + iv[:, k.index(110.0)] - 2 * iv[:, k.index(100.0)]
    elapsed = time.perf_counter() - t0
    ok = parity < 1e-10 and monotone and convex and curv[0] > curv[1] and elapsed < 300
    record(9, ok, f"parity gap {parity:.1e}, monotone {monotone}, convex {convex}, "
                  f"smile curvature T=21 {curv[0]:.4f} vs T=126 {curv[1]:.4f}", elapsed)


COMMAND_ORDER = ["ingest", "backtest", "optimize", "riskbudget", "ratios", "price"]


def _pipeline_config(tmp_path):
    cfg = json.loads((SAMPLE / "config.json").read_text())
    cfg["assets"] = {k: str(SAMPLE / v) for k, v in cfg["assets"].items()}
    cfg["benchmark"]["path"] = str(SAMPLE / cfg["benchmark"]["path"])
    # 252-day window and 120 out-of-sample days keep the run short
    cfg.update(end="2018-08-01", scenarios=1000)
    cfg["pricing"].update(n_paths=2000, maturities=[21, 63, 126], strikes=[90, 95, 100, 105, 110])
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg = _pipeline_config(tmp)
    t0 = time.perf_counter()
    codes = {}
    for run in ("a", "b"):
        for cmd in COMMAND_ORDER:
            codes[(run, cmd)] = cli.main([cmd, "--config", str(cfg), "--out", str(tmp / run)])
    return tmp, codes, time.perf_counter() - t0


def test_criterion_10_pipeline_determinism(pipeline_runs):
    tmp, codes, elapsed = pipeline_runs
    names = sorted(p.name for p in (tmp / "a").iterdir())
    _, mismatch, errors = filecmp.cmpfiles(tmp / "a", tmp / "b", names, shallow=False)
    ok = all(c == 0 for c in codes.values()) and not mismatch and not errors and len(names) >= 17
    record(10, ok, f"{len(names)} files from {len(COMMAND_ORDER)} commands, "
                   f"{len(mismatch) + len(errors)} differ between reruns", elapsed)


def _rows(path):
    return [line.rstrip("\n").split(",") for line in open(path) if not line.startswith("#")]


def test_criterion_11_report_structure(pipeline_runs):
    tmp, codes, _ = pipeline_runs
    t0 = time.perf_counter()
    out = tmp / "a"
    problems = []

    table = _rows(out / "backtest_table.csv")
    expected_cols = ["Variable", "mvt_nu5", "mvt_nu6", "mvt_nu7", "mvg", "tcopula_ws0", "tcopula_ws0.8", "tcopula_ws1"]
    if table[0] != expected_cols:
        problems.append(f"backtest columns {table[0]}")
    expected_rows = ["Innovation Distribution", "Joint Distribution", "Parameter"] + [
        f"{kind} {field}" for kind in ("VaR", "CVaR")
        for field in ("Observations", "Failures", "Expected", "Ratio", "Missing", "Traffic Light", "Binomial Test")
    ]
    if [r[0] for r in table[1:]] != expected_rows:
        problems.append("backtest rows")

    budget = _rows(out / "risk_budget.csv")
    if budget[0] != ["Method", "BTC", "ETH", "XRP", "BCH", "EOS", "LTC", "BNB"]:
        problems.append(f"risk budget columns {budget[0]}")
    if [r[0] for r in budget[1:]] != ["RC^Vol", "RC^Vol(%)", "RC^VaR", "RC^VaR(%)"]:
        problems.append("risk budget rows")

    ratios = _rows(out / "ratios.csv")
    if ratios[0] != ["Measure", "min CVaR portfolio", "min Variance portfolio", "SPY"]:
        problems.append(f"ratio columns {ratios[0]}")
    values = {r[0]: [float(v) for v in r[1:]] for r in ratios[1:]}
    if list(values) != ["MDD", "Sharpe ratio", "M2 ratio", "Rachev ratio"]:
        problems.append("ratio rows")
    if not all(math.isfinite(v) for row in values.values() for v in row):
        problems.append("non-finite ratio")
    if not all(0.0 <= v <= 1.0 for v in values.get("MDD", [])):
        problems.append("MDD outside [0, 1]")

    got = {k: values[k][0] for k in REFERENCE_MIN_CVAR if k in values}
    reference = ", ".join(f"{k} {got.get(k, float('nan')):.4f} (reference {v})" for k, v in REFERENCE_MIN_CVAR.items())
    ok = not problems and codes[("a", "ratios")] == 0
    record(11, ok, ("layout matches" if ok else "; ".join(problems)) + f"; min CVaR portfolio {reference}",
           time.perf_counter() - t0)
