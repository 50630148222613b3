"""Flat ``section.key = value`` run configuration.

Resolution order: built-in defaults, then the config file, then
``DECONF_<SECTION>_<KEY>`` environment variables, then command-line flags.
The resolved mapping is hashed; that hash tags every artifact of a run.
"""
from __future__ import annotations

import os
from dataclasses import asdict
from pathlib import Path

from .datagen import SimConfig
from .errors import ConfigError, DeconfError
from .evaluation import DEFAULT_KS, DEFAULT_SEEDS, ModelConfig
from .storage import config_hash

_SIM = asdict(SimConfig())
_SIM.pop("seed")
_MODEL = asdict(ModelConfig())

DEFAULTS: dict = {
    "run.seed": 0,
    **{f"sim.{k}": v for k, v in _SIM.items()},
    **{f"model.{k}": v for k, v in _MODEL.items()},
    "model.method": "deep_deconf",
    "split.ratios": (0.7, 0.15, 0.15),
    "eval.ks": DEFAULT_KS,
    "eval.report_k": 20,
    "sweep.kind": "confounding",
    "sweep.levels": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "sweep.noise_levels": (0.1, 0.5, 0.9, None),
    "sweep.methods": ("deep_deconf", "concat_vae"),
    "sweep.seeds": DEFAULT_SEEDS,
    "semisynth.epochs": 100,
    "jacobian.mode": "local",
    "jacobian.user": 0,
    "jacobian.top_k": 20,
}


def env_name(key: str) -> str:
    return "DECONF_" + key.replace(".", "_").upper()


def _parse_scalar(text: str, like, key: str):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {type(like).__name__}, got {text!r}") from exc
    return text


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"{key}: unknown config key")
    default = DEFAULTS[key]
    if isinstance(default, tuple):
        sample = next((v for v in default if v is not None), 0.0)
        items = [t for t in text.split(",") if t.strip()]
        return tuple(_parse_scalar(t, sample, key) for t in items)
    if default is None:
        return _parse_scalar(text, "", key)
    value = _parse_scalar(text, default, key)
    if value is None:
        raise ConfigError(f"{key}: value required")
    return value


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def resolve(path=None, overrides: dict | None = None, environ=None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(read_config_file(path))
    environ = os.environ if environ is None else environ
    for key in DEFAULTS:
        name = env_name(key)
        if name in environ:
            try:
                cfg[key] = parse_value(key, environ[name])
            except ConfigError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"{key}: unknown config key")
        cfg[key] = value
    validate(cfg)
    return cfg


def sim_config(cfg: dict, **kw) -> SimConfig:
    fields = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("sim.")}
    fields.update(kw)
    fields.setdefault("seed", cfg["run.seed"])
    return SimConfig(**fields)


def model_config(cfg: dict) -> ModelConfig:
    fields = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("model.") and k != "model.method"}
    return ModelConfig(**fields)


def validate(cfg: dict) -> None:
    """Fail early with the offending key rather than deep inside a run."""
    for section, build in (("sim", sim_config), ("model", model_config)):
        try:
            build(cfg)
        except (DeconfError, TypeError) as exc:
            raise ConfigError(f"{section}.{exc}") from exc
    ratios = cfg["split.ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split.ratios: must be three non-negative values summing to 1, got {ratios}")
    if cfg["sweep.kind"] not in ("confounding", "noise"):
        raise ConfigError(f"sweep.kind: expected 'confounding' or 'noise', got {cfg['sweep.kind']!r}")
    if cfg["jacobian.mode"] not in ("global", "local"):
        raise ConfigError(f"jacobian.mode: expected 'global' or 'local', got {cfg['jacobian.mode']!r}")
    if cfg["eval.report_k"] not in cfg["eval.ks"]:
        raise ConfigError("eval.report_k: must be one of eval.ks")
    if cfg["run.seed"] < 0:
        raise ConfigError("run.seed: must be a non-negative integer")


def render(cfg: dict) -> str:
    """Serialize back to the file format; ``read_config_file(render(c))`` reproduces ``c``."""
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, tuple):
            text = ",".join("none" if x is None else repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            text = repr(v)
        elif v is None:
            text = "none"
        else:
            text = str(v).lower() if isinstance(v, bool) else str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def hash_of(cfg: dict) -> str:
    return config_hash({k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())})
