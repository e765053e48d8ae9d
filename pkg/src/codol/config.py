"""Run configuration: file parsing and layered option resolution.

Config files are a small TOML subset: flat ``[section]`` tables holding
``key = value`` pairs where values are quoted strings, integers, floats,
booleans or flat arrays, with ``#`` comments. (The interpreter here predates
stdlib tomllib and the mirror carries no TOML package, so the subset is
parsed locally.)

Resolution order, strongest first: command-line flags, CODOL_* environment
variables, the config file, built-in defaults.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .pipeline import TrainConfig


class ConfigError(ValueError):
    """Raised for unparseable or invalid configuration."""


_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")
_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out).strip()


def _parse_scalar(text: str, where: str) -> Any:
    text = text.strip()
    if not text:
        raise ConfigError(f"{where}: empty value")
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise ConfigError(f"{where}: unterminated string")
        body = text[1:-1]
        if '"' in body:
            raise ConfigError(f"{where}: stray quote inside string")
        return body
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    raise ConfigError(f"{where}: cannot parse value {text!r}")


def _parse_value(text: str, where: str) -> Any:
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"{where}: unterminated array")
        body = text[1:-1].strip()
        if not body:
            return []
        return [_parse_scalar(item, where) for item in body.split(",")]
    return _parse_scalar(text, where)


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse flat-table config text into {section: {key: value}}."""
    doc: dict[str, Any] = {}
    section: dict[str, Any] | None = None
    section_name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: unterminated section header")
            name = line[1:-1].strip()
            if not _BARE_KEY.match(name):
                raise ConfigError(f"{where}: bad section name {name!r}")
            if name in doc:
                raise ConfigError(f"{where}: duplicate section [{name}]")
            section = {}
            section_name = name
            doc[name] = section
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if not _BARE_KEY.match(key):
            raise ConfigError(f"{where}: bad key {key!r}")
        if section is None:
            raise ConfigError(f"{where}: key {key!r} outside any [section]")
        if key in section:
            raise ConfigError(f"{where}: duplicate key {key!r} in [{section_name}]")
        section[key] = _parse_value(value, where)
    return doc


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


@dataclass
class RunSettings:
    """Options that steer a command rather than the model."""

    protocol: str = "multi-source"
    seeds: tuple[int, ...] = (0, 1, 2)
    output: str = "out"
    workers: int = 1
    plots: bool = True
    manifest: str | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        self.seeds = tuple(int(s) for s in self.seeds)


# flat option name -> (section, python type); "train" keys map onto TrainConfig
_SCHEMA: dict[str, tuple[str, str]] = {
    "protocol": ("run", "str"),
    "seeds": ("run", "int_list"),
    "output": ("run", "str"),
    "workers": ("run", "int"),
    "plots": ("run", "bool"),
    "manifest": ("dataset", "str"),
    "variant": ("train", "str"),
    "class_ctx_len": ("train", "int"),
    "domain_ctx_len": ("train", "int"),
    "class_specific": ("train", "bool"),
    "epochs": ("train", "int"),
    "batch_size": ("train", "int"),
    "accum_steps": ("train", "int"),
    "lr": ("train", "float"),
    "momentum": ("train", "float"),
    "lr_schedule": ("train", "str"),
    "seed": ("train", "int"),
    "tau": ("train", "float"),
    "posterior_mode": ("train", "str"),
    "supervise_domain": ("train", "bool"),
    "ctx_init": ("train", "str"),
    "meta_init": ("train", "str"),
    "train_dmn": ("train", "bool"),
}

ENV_PREFIX = "CODOL_"


def _coerce(value: Any, typ: str, where: str) -> Any:
    try:
        if typ == "str":
            if not isinstance(value, str):
                raise ValueError("expected a string")
            return value
        if typ == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError("expected an integer")
            return value
        if typ == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError("expected a number")
            return float(value)
        if typ == "bool":
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if typ == "int_list":
            if not isinstance(value, (list, tuple)) or any(
                isinstance(v, bool) or not isinstance(v, int) for v in value
            ):
                raise ValueError("expected a list of integers")
            return tuple(value)
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err
    raise ConfigError(f"{where}: unknown option type {typ!r}")


def _coerce_env(text: str, typ: str, where: str) -> Any:
    try:
        if typ == "str":
            return text
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"cannot parse boolean {text!r}")
        if typ == "int_list":
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err
    raise ConfigError(f"{where}: unknown option type {typ!r}")


@dataclass
class ResolvedConfig:
    run: RunSettings
    train: TrainConfig
    sources: dict[str, str] = field(default_factory=dict)  # flat name -> winning layer


def resolve_config(
    cli: Mapping[str, Any] | None = None,
    config_path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
) -> ResolvedConfig:
    """Merge defaults, config file, environment and CLI flags.

    ``cli`` holds flat option names with None meaning "not given". The
    backend spec merges the same way under the key "backend": a table in the
    file, JSON text in CODOL_BACKEND or the --backend flag.
    """
    cli = dict(cli or {})
    env = dict(env or {})
    values: dict[str, Any] = {}
    sources: dict[str, str] = {}
    backend_spec: dict[str, Any] = {"name": "toy"}

    if config_path is not None:
        doc = load_config_file(config_path)
        known_sections = {section for section, _ in _SCHEMA.values()} | {"backend"}
        for section_name, table in doc.items():
            if section_name not in known_sections:
                raise ConfigError(f"unknown section [{section_name}]")
            if section_name == "backend":
                backend_spec.update(table)
                continue
            for key, value in table.items():
                if key not in _SCHEMA or _SCHEMA[key][0] != section_name:
                    raise ConfigError(f"unknown key {key!r} in [{section_name}]")
                values[key] = _coerce(value, _SCHEMA[key][1], f"[{section_name}].{key}")
                sources[key] = "file"

    for name, (_section, typ) in _SCHEMA.items():
        env_name = ENV_PREFIX + name.upper()
        if env_name in env:
            values[name] = _coerce_env(env[env_name], typ, env_name)
            sources[name] = "env"
    if ENV_PREFIX + "BACKEND" in env:
        backend_spec.update(_parse_backend_json(env[ENV_PREFIX + "BACKEND"], "CODOL_BACKEND"))

    for name, value in cli.items():
        if value is None:
            continue
        if name == "backend":
            backend_spec.update(_parse_backend_json(value, "--backend"))
            continue
        if name not in _SCHEMA:
            raise ConfigError(f"unknown option {name!r}")
        values[name] = value
        sources[name] = "cli"

    run_kwargs = {k: v for k, v in values.items() if _SCHEMA[k][0] in ("run", "dataset")}
    train_kwargs = {k: v for k, v in values.items() if _SCHEMA[k][0] == "train"}
    try:
        run = RunSettings(**run_kwargs)
        train = TrainConfig(**train_kwargs, backend=backend_spec)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return ResolvedConfig(run=run, train=train, sources=sources)


def _parse_backend_json(text: str | Mapping[str, Any], where: str) -> dict[str, Any]:
    if isinstance(text, Mapping):
        return dict(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{where}: invalid JSON ({err})") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    return doc
