"""Write the synthetic sample price files under data/sample/.

Seven crypto-like assets follow ARMA-GARCH dynamics driven by correlated
multivariate-t innovations on a 7-day calendar; the benchmark is a calmer
GARCH series quoted on weekdays only.  The output is fully determined by SEED.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from cryptorisk import garch

SEED = 20190702
START = np.datetime64("2017-07-25")
END = np.datetime64("2019-07-02")
CRYPTO = {
    # id: (start price, daily drift, alpha1, beta1, unconditional daily vol)
    "BTC": (2700.0, 0.0010, 0.10, 0.85, 0.045),
    "ETH": (220.0, 0.0006, 0.11, 0.84, 0.055),
    "XRP": (0.18, 0.0008, 0.14, 0.80, 0.065),
    "BCH": (420.0, 0.0002, 0.12, 0.83, 0.070),
    "EOS": (2.0, 0.0012, 0.12, 0.83, 0.070),
    "LTC": (45.0, 0.0007, 0.11, 0.84, 0.058),
    "BNB": (0.25, 0.0030, 0.13, 0.82, 0.080),
}
BENCHMARK = ("SPY", 245.0, 0.0004, 0.12, 0.85, 0.008)
BURN = 500


def _write(path: Path, dates, closes) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "close"])
        for d, c in zip(dates, closes):
            writer.writerow([str(d), f"{c:.6g}"])


def main(out: Path = Path(__file__).resolve().parent.parent / "data" / "sample") -> None:
    out.mkdir(parents=True, exist_ok=True)
    g = np.random.default_rng(SEED)
    dates = np.arange(START, END + np.timedelta64(1, "D"))
    n = dates.size - 1
    d = len(CRYPTO)
    corr = np.full((d, d), 0.6) + 0.4 * np.eye(d)
    nu = 5.0
    z = g.standard_normal((n + BURN, d)) @ np.linalg.cholesky(corr).T
    eps = z * np.sqrt((nu - 2.0) / g.chisquare(nu, (n + BURN, 1)))
    for j, (name, (p0, drift, a1, b1, vol)) in enumerate(CRYPTO.items()):
        params = garch.GarchParams(drift, 0.05, -0.02, vol**2 * (1 - a1 - b1), a1, b1)
        r = garch.simulate_garch(params, eps[:, j], burn=BURN)
        _write(out / f"{name}.csv", dates, p0 * np.exp(np.concatenate([[0.0], np.cumsum(r)])))

    name, p0, drift, a1, b1, vol = BENCHMARK
    weekdays = dates[(dates.astype("datetime64[D]").view("int64") - 4) % 7 < 5]
    params = garch.GarchParams(drift, 0.0, 0.0, vol**2 * (1 - a1 - b1), a1, b1)
    r = garch.simulate_garch(params, g.standard_normal(weekdays.size - 1 + BURN), burn=BURN)
    _write(out / f"{name}.csv", weekdays, p0 * np.exp(np.concatenate([[0.0], np.cumsum(r)])))


if __name__ == "__main__":
    main()
