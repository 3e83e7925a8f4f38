"""Command-line front end: ``cryptorisk {ingest,backtest,optimize,riskbudget,ratios,price}``.

Every command reads a JSON config (see :mod:`cryptorisk.config`), writes CSV
reports into the output directory and stamps each file with the seed and a
hash of the effective configuration.  On failure the exit code is nonzero
and one JSON error line is printed to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import backtest, marketdata, optimize, option, risk
from .config import config_hash, load_config
from .dist import JointModelSpec, NigParams
from .errors import CryptoRiskError, DomainError
from .garch import GarchParams

log = logging.getLogger("cryptorisk")

TRACK_FILES = {"cvar": "track_min_cvar.csv", "variance": "track_min_variance.csv"}
_RC_LABELS = {"volatility": "RC^Vol", "cvar": "RC^VaR"}


class _Run:
    """Loaded config plus the pieces every command needs."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self._panel = None
        self._series = None

    @property
    def header(self) -> list[str]:
        return [f"cryptorisk {self.command}", f"seed={self.cfg['seed']}", f"config_hash={self.hash}"]

    def series(self):
        if self._series is None:
            c = self.cfg
            crypto = [
                marketdata.load_prices(p, c["date_column"], c["close_column"], asset_id=name)
                for name, p in c["assets"].items()
            ]
            bench = None
            if c["benchmark"] is not None:
                b = c["benchmark"]
                bench = marketdata.load_prices(b["path"], c["date_column"], c["close_column"], asset_id=b["id"])
            self._series = (crypto, bench)
        return self._series

    @property
    def panel(self) -> marketdata.ReturnPanel:
        if self._panel is None:
            crypto, bench = self.series()
            self._panel = marketdata.align_panel(crypto, bench, self.cfg["start"], self.cfg["end"])
        return self._panel

    @property
    def crypto(self) -> marketdata.ReturnPanel:
        return self.panel.select(tuple(self.cfg["assets"]))

    @property
    def benchmark_returns(self) -> Optional[tuple[str, np.ndarray]]:
        b = self.cfg["benchmark"]
        return None if b is None else (b["id"], self.panel.column(b["id"]))

    @property
    def daily_risk_free(self) -> float:
        return float(risk.daily_rate_from_annual_pct(self.cfg["risk_free_pct"]))

    def path(self, name: str) -> Path:
        return self.out / name


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(run: _Run) -> list[Path]:
    panel = run.panel
    crypto, bench = run.series()
    first = panel.dates[0] - np.timedelta64(1, "D")
    stats = []
    for s in crypto + ([bench] if bench is not None else []):
        keep = (s.dates >= first) & (s.dates <= panel.dates[-1])
        stats.append(marketdata.summary_stats(marketdata.PriceSeries(s.asset_id, s.dates[keep], s.closes[keep])))
    out = [run.path("panel.csv"), run.path("summary.csv")]
    marketdata.write_panel_csv(panel, out[0], run.header)
    marketdata.write_summary_csv(stats, out[1], run.header)
    return out


def cmd_backtest(run: _Run) -> list[Path]:
    c = run.cfg
    specs = [JointModelSpec.parse(m) for m in c["backtest"]["models"]]
    configs = [
        backtest.BacktestConfig(
            window=c["window"],
            scenarios=c["scenarios"],
            alpha=c["alpha"],
            model=spec,
            seed=c["seed"],
            refit_stride=c["backtest"]["refit_stride"],
            warm_start=c["backtest"]["warm_start"],
        )
        for spec in specs
    ]
    results = backtest.run_backtest_grid(run.crypto, configs)
    out = [run.path("backtest_table.csv")]
    backtest.write_backtest_table(
        [(spec, rep, err) for spec, (rep, _, err) in zip(specs, results)], out[0], run.header
    )
    for spec, (_, trace, _) in zip(specs, results):
        p = run.path(f"backtest_trace_{spec.label}.csv")
        backtest.write_trace_csv(trace, p, run.header)
        out.append(p)
    return out


def _rolling_config(run: _Run) -> optimize.RollingConfig:
    c = run.cfg
    lo, hi = c["optimize"]["bounds"]
    return optimize.RollingConfig(
        window=c["window"],
        scenarios=c["scenarios"],
        alpha=c["alpha"],
        model=JointModelSpec.parse(c["optimize"]["model"]),
        bounds=(lo, hi),
        seed=c["seed"],
        cvar_subsample=c["optimize"]["cvar_subsample"],
    )


def _write_tracks(run: _Run, tracks: dict) -> list[Path]:
    header = ["cryptorisk optimize", *run.header[1:]]
    out = []
    for obj, name in TRACK_FILES.items():
        optimize.write_track_csv(tracks[obj], run.path(name), header)
        out.append(run.path(name))
    optimize.write_horse_race_csv(
        [tracks["cvar"], tracks["variance"]], _bench_on(run, tracks["cvar"].dates), run.path("horse_race.csv"), header
    )
    out.append(run.path("horse_race.csv"))
    return out


def _bench_on(run: _Run, dates: np.ndarray) -> Optional[tuple[str, np.ndarray]]:
    bench = run.benchmark_returns
    if bench is None:
        return None
    idx = np.searchsorted(run.panel.dates, dates)
    return bench[0], bench[1][idx]


def _stamped_hash(path: Path) -> Optional[str]:
    with path.open() as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            if line.startswith("# config_hash="):
                return line.strip().split("=", 1)[1]
    return None


def _tracks(run: _Run) -> dict:
    """Portfolio tracks, reused from a previous ``optimize`` run with the same config."""
    paths = {obj: run.path(name) for obj, name in TRACK_FILES.items()}
    if all(p.exists() and _stamped_hash(p) == run.hash for p in paths.values()):
        return {obj: optimize.read_track_csv(p, obj) for obj, p in paths.items()}
    log.info("computing rolling portfolios")
    tracks = optimize.rolling_optimize_many(run.crypto, ("cvar", "variance"), _rolling_config(run))
    _write_tracks(run, tracks)
    return tracks


def cmd_optimize(run: _Run) -> list[Path]:
    tracks = optimize.rolling_optimize_many(run.crypto, ("cvar", "variance"), _rolling_config(run))
    return _write_tracks(run, tracks)


def cmd_riskbudget(run: _Run) -> list[Path]:
    c = run.cfg
    panel = run.crypto
    window = c["window"]
    if panel.returns.shape[0] < window:
        raise DomainError(f"need at least window={window} returns for the in-sample risk budget")
    d = len(panel.assets)
    w = np.full(d, 1.0 / d)
    ins = panel.returns[:window]
    reports = [
        (_RC_LABELS["volatility"], risk.vol_risk_contributions(w, np.cov(ins, rowvar=False), panel.assets)),
        (_RC_LABELS["cvar"], risk.cvar_risk_contributions(w, ins, c["alpha"], panel.assets)),
    ]
    out = [run.path("risk_budget.csv"), run.path("risk_budget_rolling.csv")]
    risk.write_risk_budget_csv(reports, out[0], run.header)

    with out[1].open("w", newline="") as fh:
        for line in run.header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *(f"vol_pct_{a}" for a in panel.assets), *(f"cvar_pct_{a}" for a in panel.assets)])
        for t in range(window, panel.returns.shape[0]):
            win = panel.returns[t - window : t]
            vol = risk.vol_risk_contributions(w, np.cov(win, rowvar=False)).per_asset_pct
            cv = risk.cvar_risk_contributions(w, win, c["alpha"]).per_asset_pct
            writer.writerow([str(panel.dates[t]), *(f"{v:.6f}" for v in vol), *(f"{v:.6f}" for v in cv)])
    return out


def cmd_ratios(run: _Run) -> list[Path]:
    c = run.cfg
    tracks = _tracks(run)
    columns = [(optimize.PORTFOLIO_LABELS[o], tracks[o].returns) for o in ("cvar", "variance")]
    bench = _bench_on(run, tracks["cvar"].dates)
    if bench is None:
        raise DomainError("risk-adjusted ratios need a benchmark series for M2")
    columns.append(bench)
    rf = run.daily_risk_free
    bench_vol = float(np.std(bench[1], ddof=1))
    rows = {
        "MDD": [risk.mdd(risk.wealth_curve(r)) for _, r in columns],
        "Sharpe ratio": [risk.sharpe(r, rf) for _, r in columns],
        "M2 ratio": [risk.m2(r, rf, bench_vol) for _, r in columns],
        "Rachev ratio": [risk.rachev(r, rf, c["alpha"], c["alpha"]) for _, r in columns],
    }
    out = [run.path("ratios.csv")]
    with out[0].open("w", newline="") as fh:
        for line in run.header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Measure", *(name for name, _ in columns)])
        for label, values in rows.items():
            writer.writerow([label, *(f"{v:.4f}" for v in values)])
    return out


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def cmd_price(run: _Run) -> list[Path]:
    pc = run.cfg["pricing"]
    config = option.PricerConfig(
        maturity=max(pc["maturities"]),
        rate=pc["rate_pct"] / 100.0 / risk.TRADING_DAYS,
        n_paths=pc["n_paths"],
        initial_capital=pc["initial_capital"],
        seed=run.cfg["seed"],
        tilt_scale=pc["tilt_scale"],
    )
    if pc["garch_params"] and pc["nig_params"]:
        models = {"custom": (GarchParams.from_dict(_load_json(pc["garch_params"])),
                             NigParams.from_dict(_load_json(pc["nig_params"])), None)}
    else:
        models = {}
        for obj, track in _tracks(run).items():
            fitted = option.fit_pricing_model(track.returns)
            models[obj] = (fitted.garch, fitted.nig, fitted)
    out = []
    for name, (garch_model, nig, fitted) in sorted(models.items()):
        suffix = {"cvar": "min_cvar", "variance": "min_variance"}.get(name, name)
        surface = option.build_surface(garch_model, nig, pc["strikes"], pc["maturities"], config)
        p = run.path(f"surface_{suffix}.csv")
        option.write_surface_csv(surface, p, run.header)
        out.append(p)
        params = garch_model.params if fitted is not None else garch_model
        doc = {"garch": params.to_dict(), "nig": nig.to_dict()}
        if fitted is not None:
            doc["ks_statistic"] = fitted.ks_statistic
            doc["ks_pvalue"] = fitted.ks_pvalue
        p = run.path(f"pricing_model_{suffix}.json")
        p.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        out.append(p)
    return out


COMMANDS = {
    "ingest": cmd_ingest,
    "backtest": cmd_backtest,
    "optimize": cmd_optimize,
    "riskbudget": cmd_riskbudget,
    "ratios": cmd_ratios,
    "price": cmd_price,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="top-level random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", help="joint model, e.g. mvt:5, mvg, tcopula:0.8")
    common.add_argument("--alpha", type=float, help="tail probability")
    common.add_argument("--window", type=int, help="rolling window length in days")
    common.add_argument("--scenarios", type=int, help="Monte Carlo scenarios per day")
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    parser = argparse.ArgumentParser(prog="cryptorisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "align price files into a return panel and summary table",
        "backtest": "rolling VaR/CVaR backtest over the model grid",
        "optimize": "rolling min-CVaR and min-variance portfolios",
        "riskbudget": "in-sample and rolling Euler risk contributions",
        "ratios": "risk-adjusted return measures of the portfolios and benchmark",
        "price": "Esscher-NIG option price and implied volatility surfaces",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("seed", "out", "model", "alpha", "window", "scenarios")}
    try:
        cfg = load_config(args.config, overrides)
        run = _Run(args.command, cfg)
        for path in COMMANDS[args.command](run):
            print(path)
    except (CryptoRiskError, OSError, ValueError, KeyError, TypeError) as exc:
        print("error: " + json.dumps({"command": args.command, "type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
