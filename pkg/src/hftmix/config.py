"""Run configuration: defaults, dotted overrides, schema validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .env import EnvConfig
from .errors import ConfigInvalid
from .hyper_agent import HyperConfig
from .memory import MemoryConfig
from .sub_agent import SubAgentConfig

SCHEMA_PACKAGE = "hftmix.schemas"


def load_schema(name: str) -> dict:
    return json.loads(resources.files(SCHEMA_PACKAGE).joinpath(name).read_text())


def default_config() -> dict:
    return {
        "seed": 0,
        "data": {"path": "data.csv", "train_fraction": 0.6, "validation_fraction": 0.2, "ranges": None},
        "env": asdict(EnvConfig()),
        "decomposition": {"l_chunk": 360, "filter_window": None},
        "sub_agent": asdict(SubAgentConfig()),
        "memory": asdict(MemoryConfig()),
        "hyper": asdict(HyperConfig()),
        "backtest": {"macd_fast": 12, "macd_slow": 26, "macd_signal": 9, "iv_threshold": 0.2},
    }


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b.c=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ConfigInvalid(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigInvalid(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(cfg: dict, overrides) -> dict:
    out = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        node = out
        for p in path[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigInvalid(f"override {text!r}: {p!r} is not a section")
            node = node[p]
        node[path[-1]] = value
    return out


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, load_schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{where}: {exc.message}", path=where) from None
    d = cfg["data"]
    if d.get("ranges") is None and d["train_fraction"] + d["validation_fraction"] >= 1:
        raise ConfigInvalid("train_fraction + validation_fraction must be < 1", path="data")
    if cfg["memory"]["m_neighbors"] > cfg["memory"]["capacity"]:
        raise ConfigInvalid("memory.m_neighbors exceeds memory.capacity", path="memory")
    return cfg


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the JSON file, then ``--set`` overrides; validated."""
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigInvalid("config root must be an object")
        cfg = _merge(cfg, user)
    return validate(apply_overrides(cfg, overrides))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _build(cls, section: dict):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in section.items() if k in names})


def env_config(cfg: dict) -> EnvConfig:
    return _build(EnvConfig, cfg["env"])


def sub_agent_config(cfg: dict) -> SubAgentConfig:
    return _build(SubAgentConfig, cfg["sub_agent"])


def hyper_config(cfg: dict) -> HyperConfig:
    return _build(HyperConfig, cfg["hyper"])


def memory_config(cfg: dict) -> MemoryConfig:
    return _build(MemoryConfig, cfg["memory"])
