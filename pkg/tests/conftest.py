from pathlib import Path

import numpy as np
import pytest

from cryptorisk.marketdata import ReturnPanel

ROOT = Path(__file__).resolve().parent.parent
SAMPLE = ROOT / "data" / "sample"


@pytest.fixture
def sample_dir() -> Path:
    return SAMPLE


def write_prices(path: Path, dates, closes, header=("date", "close")) -> Path:
    lines = [",".join(header)] + [f"{d},{c}" for d, c in zip(dates, closes)]
    path.write_text("\n".join(lines) + "\n")
    return path


def make_panel(returns: np.ndarray, start="2018-01-01", names=None) -> ReturnPanel:
    returns = np.asarray(returns, dtype=float)
    if returns.ndim == 1:
        returns = returns[:, None]
    t, d = returns.shape
    dates = np.arange(np.datetime64(start), np.datetime64(start) + t)
    names = names or tuple(f"A{i}" for i in range(d))
    return ReturnPanel(tuple(names), dates, returns)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
