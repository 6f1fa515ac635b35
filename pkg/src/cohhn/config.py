"""Run configuration: flat dotted keys read from TOML, overridable from the CLI."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import ConfigError
from .model import ABLATIONS, Hyperparams

DEFAULTS: dict[str, Any] = {
    "input.path": "",
    "input.sessionize": "key",
    "input.event_column": "",
    "input.keep_events": [],
    "col.session": "session",
    "col.timestamp": "timestamp",
    "col.item": "item",
    "col.price": "price",
    "col.category": "category",
    "filter.min_item_count": 10,
    "filter.min_session_len": 2,
    "price.rho": 10,
    "price.mode": "logistic",
    "model.d": 128,
    "model.heads": 4,
    "model.r": 3,
    "model.max_len": 19,
    "model.ablation": "none",
    "model.raw_beta": False,
    "train.epochs": 10,
    "train.batch": 100,
    "train.lr": 0.001,
    "train.seed": 0,
    "eval.ks": [10, 20],
    "baseline.k_neighbors": 500,
    "paths.data": "data",
    "paths.out": "runs",
    "sweep.param": "",
    "sweep.values": [],
    "sweep.parallel": False,
}

CHOICES = {
    "input.sessionize": ("key", "daily"),
    "price.mode": ("logistic", "uniform"),
    "model.ablation": ABLATIONS,
    "sweep.param": ("", "rho", "r"),
}


def _flatten(tree: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ConfigError(f"{key}: expected a boolean, got {value!r}")
            return value.lower() in ("true", "1")
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if key in ("eval.ks",):
                return [int(v) for v in value]
            if key == "sweep.values":
                return [int(v) for v in value]
            return [str(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r}") from None


class RunConfig:
    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        self.update(values or {})

    def update(self, values: Mapping[str, Any]) -> "RunConfig":
        for key, value in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = _coerce(key, value)
        self.validate()
        return self

    def validate(self) -> None:
        for key, allowed in CHOICES.items():
            if self.values[key] not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {self.values[key]!r}")
        if self.values["train.batch"] < 1 or self.values["train.epochs"] < 0:
            raise ConfigError("train.batch must be >= 1 and train.epochs >= 0")
        if self.values["price.rho"] < 2:
            raise ConfigError("price.rho must be >= 2")
        if not self.values["eval.ks"] or min(self.values["eval.ks"]) < 1:
            raise ConfigError("eval.ks must be a non-empty list of positive integers")
        self.hyperparams()

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def hyperparams(self, rho: int | None = None) -> Hyperparams:
        v = self.values
        return Hyperparams(d=v["model.d"], heads=v["model.heads"], rho=rho or v["price.rho"],
                           r=v["model.r"], max_len=v["model.max_len"],
                           ablation=v["model.ablation"], raw_beta=v["model.raw_beta"])

    def columns(self) -> dict[str, str]:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("col.")}

    def to_json(self) -> dict:
        return dict(sorted(self.values.items()))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        values: dict[str, Any] = {}
        if path:
            try:
                raw = Path(path).read_bytes()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            try:
                if str(path).endswith(".json"):
                    values = _flatten(json.loads(raw))
                else:
                    values = _flatten(tomllib.loads(raw.decode("utf-8")))
            except (ValueError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(values)
