"""JSON run configuration for the command-line pipeline."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Optional

from .errors import DomainError

DEFAULT_MODELS = ["mvt:5", "mvt:6", "mvt:7", "mvg", "tcopula:0", "tcopula:0.8", "tcopula:1.0"]

DEFAULTS: dict[str, Any] = {
    "assets": {},  # id -> price CSV path
    "benchmark": None,  # {"id": ..., "path": ...}
    "date_column": "date",
    "close_column": "close",
    "start": None,
    "end": None,
    "seed": 0,
    "alpha": 0.01,
    "window": 252,
    "scenarios": 10_000,
    "risk_free_pct": 2.0,  # annual yield used by the return ratios
    "out": "out",
    "backtest": {"models": DEFAULT_MODELS, "refit_stride": 1, "warm_start": True},
    "optimize": {"model": "mvt:5", "bounds": [0.0, 1.0], "cvar_subsample": None},
    "pricing": {
        "maturities": [21, 42, 63, 84, 105, 126],
        "strikes": [80, 85, 90, 95, 100, 105, 110, 115, 120],
        "n_paths": 10_000,
        "rate_pct": 2.0,  # annual; converted to a daily rate with /252
        "initial_capital": 100.0,
        "tilt_scale": "sqrt_sigma",
        "garch_params": None,  # optional JSON file; skips fitting when given with nig_params
        "nig_params": None,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise DomainError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _resolve(path: Optional[str], root: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (root / p))


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the JSON file, then ``overrides``.  Relative paths resolve against the file."""
    cfg = copy.deepcopy(DEFAULTS)
    root = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise DomainError(f"{p}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        cfg = _merge(cfg, data)
        root = p.resolve().parent
    cfg["assets"] = {k: _resolve(v, root) for k, v in cfg["assets"].items()}
    if cfg["benchmark"] is not None:
        cfg["benchmark"] = {"id": cfg["benchmark"]["id"], "path": _resolve(cfg["benchmark"]["path"], root)}
    for key in ("garch_params", "nig_params"):
        cfg["pricing"][key] = _resolve(cfg["pricing"][key], root)
    cfg["out"] = _resolve(cfg["out"], root)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "model":
            cfg["backtest"]["models"] = [value]
            cfg["optimize"]["model"] = value
        else:
            cfg[key] = value
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if not cfg["assets"]:
        raise DomainError("config lists no assets")
    for name, p in cfg["assets"].items():
        if not Path(p).exists():
            raise FileNotFoundError(f"price file for {name} not found: {p}")
    if cfg["benchmark"] is not None and not Path(cfg["benchmark"]["path"]).exists():
        raise FileNotFoundError(f"benchmark price file not found: {cfg['benchmark']['path']}")
    if cfg["start"] and cfg["end"] and cfg["start"] >= cfg["end"]:
        raise DomainError("start date must precede end date")
    if not 0 < cfg["alpha"] < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if int(cfg["seed"]) < 0:
        raise DomainError("seed must be non-negative")


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON.

    The output directory is left out: where results are written does not
    change what they contain.
    """
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical(body).encode()).hexdigest()[:16]
