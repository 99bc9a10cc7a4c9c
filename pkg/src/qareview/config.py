"""Runtime configuration with flag > environment > config-file precedence."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Mapping, Optional

ENV_PREFIX = "QAREVIEW"

DEFAULTS = {
    "data_dir": "./qareview-data",
    "out_dir": "./qareview-out",
    "backend": "mock",
    "backend_url": "",
    "backend_token": "",
    "retain_iou": 0.5,
    "port": 8000,
    "seed": 0,
}


class BadConfig(Exception):
    pass


@dataclass(frozen=True)
class Config:
    data_dir: str
    out_dir: str
    backend: str
    backend_url: str
    backend_token: str
    retain_iou: float
    port: int
    seed: int


def _load_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise BadConfig(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise BadConfig(f"config file {path} must hold a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise BadConfig(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(
    flags: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
    config_path: Optional[str] = None,
) -> Config:
    """Merge sources into one Config. Flags win over env, env over file.

    ``flags`` values of None mean "not given on the command line".
    """
    flags = flags or {}
    env = os.environ if env is None else env
    config_path = config_path or env.get(f"{ENV_PREFIX}_CONFIG")
    file_values = _load_file(config_path)

    def pick(key: str):
        flag = flags.get(key)
        if flag is not None:
            return flag
        env_value = env.get(f"{ENV_PREFIX}_{key.upper()}")
        if env_value is not None:
            return env_value
        return file_values.get(key, DEFAULTS[key])

    try:
        return Config(
            data_dir=str(pick("data_dir")),
            out_dir=str(pick("out_dir")),
            backend=str(pick("backend")),
            backend_url=str(pick("backend_url")),
            backend_token=str(pick("backend_token")),
            retain_iou=float(pick("retain_iou")),
            port=int(pick("port")),
            seed=int(pick("seed")),
        )
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"invalid configuration value: {exc}")


def make_backend(config: Config):
    from .proposal import HttpBackend, MockBackend

    if config.backend == "mock":
        return MockBackend(seed=config.seed)
    if config.backend == "http":
        if not config.backend_url:
            raise BadConfig("backend 'http' requires a backend URL")
        return HttpBackend(config.backend_url, token=config.backend_token or None)
    raise BadConfig(f"unknown backend {config.backend!r} (expected 'mock' or 'http')")
