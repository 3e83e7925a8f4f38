import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from cryptorisk import risk
from cryptorisk.errors import DomainError, InsufficientDataError, ShapeError

LOSSES = np.arange(-1.0, -101.0, -1.0)

outcomes = arrays(
    np.float64, st.integers(20, 400), elements=st.floats(-1.0, 1.0, allow_nan=False, width=64)
)
levels = st.sampled_from([0.01, 0.05, 0.1, 0.25])


def test_var_degenerate():
    assert risk.var(np.full(50, -0.05), 0.01) == 0.05
    assert risk.cvar(np.full(50, -0.05), 0.1) == pytest.approx(0.05, abs=1e-17)


def test_var_hand_enumeration():
    assert risk.var_index(0.05, 100) == 5
    assert risk.var(LOSSES, 0.05) == 96.0


def test_var_positive_outcomes():
    assert risk.var(np.linspace(0.01, 1, 100), 0.05) <= 0


def test_cvar_hand_enumeration():
    assert risk.cvar(LOSSES, 0.05) == 98.0


def test_counts_guard_representation_error():
    assert risk.var_index(0.07, 100) == 7
    assert risk.tail_count(0.07, 100) == 7


def test_level_and_size_errors():
    with pytest.raises(DomainError):
        risk.var(LOSSES, 0.0)
    with pytest.raises(InsufficientDataError):
        risk.cvar(LOSSES[:50], 0.01)
    with pytest.raises(InsufficientDataError):
        risk.var([], 0.1)


def test_cvar_dominates_var_brute_force():
    g = np.random.default_rng(0)
    for _ in range(1000):
        x = g.standard_t(4, g.integers(100, 500))
        assert risk.cvar(x, 0.05) >= risk.var(x, 0.05) - 1e-15


@settings(max_examples=200, deadline=None)
@given(outcomes, levels, st.sampled_from([0.5, 2.0, 4.0, 1024.0]))
def test_positive_homogeneity(x, alpha, c):
    # power-of-two factors scale without rounding
    assert risk.var(c * x, alpha) == c * risk.var(x, alpha)
    if risk.tail_count(alpha, x.size) >= 1:
        assert risk.cvar(c * x, alpha) == pytest.approx(c * risk.cvar(x, alpha), rel=1e-14, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(outcomes, levels, st.floats(0.1, 7.0), st.floats(-2.0, 2.0))
def test_homogeneity_and_translation(x, alpha, c, shift):
    if risk.tail_count(alpha, x.size) < 1:
        return
    assert risk.var(c * x, alpha) == pytest.approx(c * risk.var(x, alpha), rel=1e-14, abs=1e-15)
    assert risk.cvar(c * x, alpha) == pytest.approx(c * risk.cvar(x, alpha), rel=1e-13, abs=1e-14)
    assert risk.cvar(x + shift, alpha) == pytest.approx(risk.cvar(x, alpha) - shift, abs=1e-13)


@settings(max_examples=200, deadline=None)
@given(outcomes, levels)
def test_cvar_at_least_var(x, alpha):
    if risk.tail_count(alpha, x.size) >= 1:
        assert risk.cvar(x, alpha) >= risk.var(x, alpha)


def test_mdd_examples():
    assert risk.mdd(np.arange(1.0, 20.0)) == 0.0
    assert risk.mdd([100, 120, 90, 110]) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(DomainError):
        risk.mdd([1.0, 0.0])


def test_wealth_curve():
    assert_allclose(risk.wealth_curve([math.log(2), math.log(0.5)]), [1.0, 2.0, 1.0])


def test_sharpe_examples():
    rf = np.full(10, 1e-4)
    r = rf + np.linspace(-0.01, 0.01, 10) * 0
    with pytest.raises(DomainError):
        risk.sharpe(r, rf)
    noise = np.random.default_rng(1).normal(0, 0.01, 10)
    noise -= noise.mean()
    assert risk.sharpe(rf + noise, rf) == pytest.approx(0.0, abs=1e-12)
    x = np.random.default_rng(2).normal(0.001, 0.02, 200_000)
    assert risk.sharpe(x) == pytest.approx(0.05, abs=3 / math.sqrt(x.size))


def test_sharpe_annualized():
    x = np.random.default_rng(3).normal(0.001, 0.02, 500)
    assert risk.sharpe(x, annualize=True) == pytest.approx(risk.sharpe(x) * math.sqrt(252))


def test_risk_free_shape_mismatch():
    with pytest.raises(ShapeError):
        risk.sharpe(np.ones(5), np.ones(4))


def test_m2_examples():
    x = np.random.default_rng(4).normal(0.0, 0.01, 300)
    x -= x.mean()
    assert risk.m2(x, 0.0, 0.02) == pytest.approx(0.0, abs=1e-15)
    y = np.random.default_rng(5).normal(0.001, 0.01, 300)
    assert risk.m2(y, 1e-4, 0.0) == pytest.approx(1e-4)
    # Sharpe 0.05, sigma_M 0.01, R_f 0.0001
    z = np.array([-1.0, 1.0]) / math.sqrt(2)
    z = 1e-4 + z + 0.05 * np.std(z, ddof=1)
    assert risk.sharpe(z, 1e-4) == pytest.approx(0.05)
    assert risk.m2(z, 1e-4, 0.01) == pytest.approx(0.0006)


def test_rachev_examples():
    assert risk.rachev([2.0, -1.0], 0.0, 0.5, 0.5) == pytest.approx(2.0)
    x = np.random.default_rng(6).standard_normal(100_000)
    assert risk.rachev(np.concatenate([x, -x]), 0.0, 0.05, 0.05) == pytest.approx(1.0, abs=1e-12)
    assert risk.rachev(x, 0.0, 0.05, 0.05) == pytest.approx(1.0, abs=0.03)


def test_daily_rate():
    assert risk.daily_rate_from_annual_pct(2.52) == pytest.approx(1e-4)


def test_vol_rc_symmetric():
    rep = risk.vol_risk_contributions(np.full(4, 0.25), np.eye(4))
    assert_allclose(rep.per_asset, 0.125)
    assert rep.total == pytest.approx(0.5)
    assert_allclose(rep.per_asset_pct, 25.0)


def test_vol_rc_single_asset():
    cov = np.diag([0.04, 0.09, 0.01])
    rep = risk.vol_risk_contributions([0.0, 1.0, 0.0], cov, ["a", "b", "c"])
    assert_allclose(rep.per_asset, [0.0, 0.3, 0.0])
    assert rep.assets == ("a", "b", "c")


def test_vol_rc_euler_identity():
    g = np.random.default_rng(7)
    for _ in range(100):
        a = g.standard_normal((5, 5))
        cov = a @ a.T + 0.1 * np.eye(5)
        w = g.dirichlet(np.ones(5))
        rep = risk.vol_risk_contributions(w, cov)
        assert rep.total == pytest.approx(math.sqrt(w @ cov @ w), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100.0))
def test_vol_rc_percentages_scale_free(seed, c):
    g = np.random.default_rng(seed)
    a = g.standard_normal((3, 3))
    cov = a @ a.T + 0.1 * np.eye(3)
    w = g.dirichlet(np.ones(3))
    p1 = risk.vol_risk_contributions(w, cov).per_asset_pct
    p2 = risk.vol_risk_contributions(w, c * cov).per_asset_pct
    assert_allclose(p1, p2, atol=1e-9)


def test_cvar_rc_single_asset():
    x = np.random.default_rng(8).standard_normal((1000, 1))
    rep = risk.cvar_risk_contributions([1.0], x, 0.05)
    assert rep.per_asset[0] == pytest.approx(risk.cvar(x[:, 0], 0.05), rel=1e-14)


def test_cvar_rc_identical_columns():
    x = np.random.default_rng(9).standard_normal(1000)
    rep = risk.cvar_risk_contributions([0.5, 0.5], np.column_stack([x, x]), 0.05)
    assert rep.per_asset[0] == rep.per_asset[1]


def test_cvar_rc_decomposition():
    g = np.random.default_rng(10)
    for _ in range(20):
        x = g.standard_t(5, (2000, 4)) @ g.standard_normal((4, 4))
        w = g.dirichlet(np.ones(4))
        rep = risk.cvar_risk_contributions(w, x, 0.01)
        assert rep.total == pytest.approx(risk.cvar(x @ w, 0.01), abs=1e-12)


def test_write_risk_budget_csv(tmp_path):
    rep = risk.vol_risk_contributions(np.full(2, 0.5), np.eye(2), ["BTC", "ETH"])
    path = tmp_path / "rb.csv"
    risk.write_risk_budget_csv([("RC^Vol", rep)], path, ["seed=0"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1] == "Method,BTC,ETH"
    assert lines[3] == "RC^Vol(%),50.0000,50.0000"
