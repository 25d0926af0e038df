"""YAML run configuration. See ``docs/config.md`` for the schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import yaml

from .errors import ValidationError

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out": "out",
    "data": {
        "logs": [],
        "slot": None,
        "origin": None,
        "delivery_day": None,
        "training_days": 7,
        "max_malformed": 0.01,
    },
    "market": None,
    "forecast": {
        "model": "pnr",
        "day_degree": 1,
        "hour_degree": 5,
        "bandwidth": 0.3,
        "backtest_days": 3,
    },
    "curves": {
        "source": "rlwr",
        "fraction": 0.5,
        "robustness_iters": 2,
        "degree": 2,
        "resample_rate": 1.5,
        "v_cpm": None,
        "mu_cpm": None,
        "sigma": None,
    },
    "risk": {"gamma": 0.0, "omega": 0.0, "lambda": 0.0},
    "simulation": {
        "T": 7.0,
        "T_end": 8.0,
        "arrival_rate": None,
        "rate_convention": "Q/T",
        "runs": 20,
        "price_model": {"kind": "lognormal_fit"},
    },
    "report": {"realized_logs": []},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "price_model":
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default=Path("."))

    # -- loading -----------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path, **overrides) -> RunConfig:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, path.parent, **overrides)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".", **overrides) -> RunConfig:
        if not isinstance(doc, dict):
            raise ValidationError("config must be a mapping")
        raw = _merge(DEFAULTS, doc)
        if overrides.get("seed") is not None:
            raw["seed"] = int(overrides["seed"])
        if overrides.get("slot") is not None:
            raw["data"]["slot"] = overrides["slot"]
        cfg = cls(raw, Path(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.raw["data"]
        for p in self.log_paths + self.realized_paths:
            if not p.exists():
                raise ValidationError(f"log file not found: {p}")
        if self.raw["market"] is None:
            if not d["logs"]:
                raise ValidationError("config needs data.logs or a market: {S, Q} block")
            if d["delivery_day"] is None:
                raise ValidationError("data.delivery_day is required when forecasting")
            if int(d["delivery_day"]) < 2:
                raise ValidationError("delivery_day must leave >= 2 training days")
        else:
            m = self.raw["market"]
            if set(m) != {"S", "Q"}:
                raise ValidationError("market block must hold exactly S and Q")
        if int(d["training_days"]) < 2:
            raise ValidationError("training_days must be >= 2")
        c = self.raw["curves"]
        if c["source"] not in ("rlwr", "uniform", "lognormal"):
            raise ValidationError(f"curves.source must be rlwr, uniform or lognormal, got {c['source']!r}")
        if c["source"] == "uniform" and c["v_cpm"] is None:
            raise ValidationError("curves.v_cpm is required for uniform curves")
        if c["source"] == "lognormal" and (c["mu_cpm"] is None or c["sigma"] is None):
            raise ValidationError("curves.mu_cpm and curves.sigma are required for log-normal curves")
        if c["source"] == "rlwr" and not d["logs"]:
            raise ValidationError("rlwr curves need data.logs")
        s = self.raw["simulation"]
        if not 0 < float(s["T"]) < float(s["T_end"]):
            raise ValidationError("simulation needs 0 < T < T_end")
        if int(s["runs"]) < 1:
            raise ValidationError("simulation.runs must be >= 1")

    # -- accessors ---------------------------------------------------------

    def _paths(self, items) -> list[Path]:
        return [(self.base_dir / p) if not Path(p).is_absolute() else Path(p) for p in items]

    @property
    def log_paths(self) -> list[Path]:
        return self._paths(self.raw["data"]["logs"])

    @property
    def realized_paths(self) -> list[Path]:
        return self._paths(self.raw["report"]["realized_logs"])

    @property
    def origin(self) -> date | None:
        o = self.raw["data"]["origin"]
        if o is None or isinstance(o, date):
            return o
        try:
            return date.fromisoformat(str(o))
        except ValueError as exc:
            raise ValidationError(f"data.origin is not an ISO date: {o!r}") from exc

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def digest(self) -> str:
        """Hash of the effective configuration (after overrides, output dir excluded)."""
        body = {k: v for k, v in self.raw.items() if k != "out"}
        blob = json.dumps(body, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
