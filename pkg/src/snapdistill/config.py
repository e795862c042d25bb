"""Flat ``key = value`` experiment configs.

Blank lines and ``#`` comments are ignored. Keys use underscores; the CLI
spells them with hyphens. Precedence is CLI > file > defaults.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _int_list(s) -> list[int]:
    if isinstance(s, (list, tuple)):
        return [int(x) for x in s]
    return [int(x) for x in str(s).split(",") if x.strip()]


def _opt_float(s):
    return None if s in (None, "", "none", "None") else float(s)


def _opt_int(s):
    return None if s in (None, "", "none", "None") else int(s)


def _opt_str(s):
    return None if s in (None, "", "none", "None") else str(s)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "mode": (str, "sd"),
    "model": (str, "mlp:64"),
    "epochs": (int, 20),
    "batch": (int, 128),
    "k": (_opt_int, None),  # None -> 1 for bl, 4 otherwise
    "temp": (float, 2.0),
    "alpha": (float, 0.1),
    "lambda_s": (_opt_float, None),
    "lambda_t": (_opt_float, None),
    "momentum": (float, 0.9),
    "weight_decay": (float, 1e-4),
    "decay_bn": (_bool, True),
    "seed": (int, 0),
    "seeds": (_int_list, []),
    "data": (str, "synth-hier"),
    "out": (_opt_str, None),
    "resume": (_opt_str, None),
    "fork_seed": (_opt_int, None),
    "fork_restart": (_bool, False),
    "augment": (_bool, True),
    "padding": (str, "constant"),
    "dtype": (str, "float32"),
    # synthetic data
    "classes": (int, 20),
    "superclasses": (int, 4),
    "per_class": (int, 200),
    "test_per_class": (int, 200),
    "dim": (int, 8),
    "separation": (float, 6.0),
    "within": (float, 0.5),
    "data_seed": (_opt_int, None),  # None -> run seed
    # image geometry (synthetic images for resnet, or binary files)
    "channels": (int, 3),
    "image_size": (int, 8),
    "label_bytes": (int, 1),
}


def defaults() -> dict[str, Any]:
    return {k: d for k, (_, d) in SCHEMA.items()}


def coerce(key: str, value) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key}")
    parser = SCHEMA[key][0]
    try:
        return parser(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {value!r} ({e})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key: {key}")
        out[key] = coerce(key, value)
    return out


def load_config_file(path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def merge(file_values: dict[str, Any] | None, overrides: dict[str, Any] | None) -> dict[str, Any]:
    cfg = defaults()
    for layer in (file_values or {}, overrides or {}):
        for k, v in layer.items():
            if v is not None:
                cfg[k] = coerce(k, v)
    if cfg["k"] is None:
        cfg["k"] = 1 if cfg["mode"].lower() == "bl" else 4
    return cfg


def format_config(cfg: dict[str, Any]) -> str:
    lines = []
    for k in SCHEMA:
        v = cfg.get(k)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
