"""Per-command JSON configuration: defaults, dotted overrides, validation, hashing."""
import copy
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

from .datagen import SceneRecipe
from .invrender import OptimConfig
from .prior.training import TrainConfig
from .renderer import RenderConfig
from .sds import SdsConfig

REQUIRED = "<required>"


class ConfigError(ValueError):
    """Bad configuration: unknown key, wrong type or missing required value."""


def _optim_defaults():
    d = asdict(OptimConfig())
    d.pop("render")
    d.pop("sds")
    return d


def _defaults():
    return {
        "gen-data": {
            "out_dir": REQUIRED,
            "count": 1,
            "randomize": [],
            "recipe": asdict(SceneRecipe()),
        },
        "train-prior": {
            "out_dir": REQUIRED,
            "datasets": REQUIRED,
            "train": asdict(TrainConfig()),
        },
        "predict-2d": {
            "out_dir": REQUIRED,
            "checkpoint": REQUIRED,
            "dataset": REQUIRED,
            "k": 10,
            "seed": 0,
            "n_steps": 5,
            "guidance_scale": 3.0,
            "max_views": 0,
        },
        "invert": {
            "out_dir": REQUIRED,
            "dataset": REQUIRED,
            "checkpoint": None,
            "use_prior": True,
            "max_views": 0,
            "optim": _optim_defaults(),
            "render": asdict(RenderConfig(spp=4, background="env")),
            # total_iters 0 means "same as optim.iterations"
            "sds": dict(asdict(SdsConfig()), total_iters=0),
        },
        "relight": {
            "out_dir": REQUIRED,
            "assets": REQUIRED,
            "dataset": REQUIRED,
            "env": None,
            "illuminant_seed": 1000,
            "env_scale": 1.0,
            "spp": 16,
            "seed": 0,
            "max_views": 0,
        },
        "eval": {
            "out_dir": REQUIRED,
            "dataset": REQUIRED,
            "assets": None,
            "predictions": None,
            "env": None,
            "illuminant_seed": 1000,
            "env_scale": 1.0,
            "spp": 16,
            "seed": 0,
            "max_views": 0,
            "method": "method",
        },
    }


COMMANDS = tuple(_defaults())


def defaults(command):
    try:
        return copy.deepcopy(_defaults()[command])
    except KeyError:
        raise ConfigError(f"unknown command {command!r}") from None


def _check_type(key, default, value):
    if default is None or default == REQUIRED or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    return value


def _merge(base, update, prefix=""):
    for k, v in update.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key}: expected an object, got {v!r}")
            _merge(base[k], v, key + ".")
        else:
            base[k] = _check_type(key, base[k], v)
    return base


def parse_override(text):
    """``a.b.c=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = value
    for part in reversed(key.strip().split(".")):
        out = {part: out}
    return out


def _missing(cfg, prefix=""):
    for k, v in cfg.items():
        if isinstance(v, dict):
            yield from _missing(v, f"{prefix}{k}.")
        elif v == REQUIRED:
            yield prefix + k


def load_config_file(path, command):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    # a resolved.json from an earlier run can be fed back in directly
    if set(doc) == {"command", "config", "config_hash"}:
        if doc["command"] != command:
            raise ConfigError(f"{path}: resolved config is for {doc['command']!r}, not {command!r}")
        doc = doc["config"]
    return doc


def resolve(command, file_doc=None, overrides=()):
    cfg = defaults(command)
    if file_doc:
        _merge(cfg, file_doc)
    for o in overrides:
        _merge(cfg, parse_override(o) if isinstance(o, str) else o)
    missing = list(_missing(cfg))
    if missing:
        raise ConfigError(f"missing required config value {missing[0]!r}")
    return cfg


def config_hash(cfg):
    """Content hash of a resolved config; ``out_dir`` is excluded so a rerun
    into another directory hashes the same."""
    d = {k: v for k, v in cfg.items() if k != "out_dir"}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def resolved_document(command, cfg):
    return {"command": command, "config": cfg, "config_hash": config_hash(cfg)}


# ------------------------------------------------------------------ builders

def _tuples(d, keys):
    d = dict(d)
    for k in keys:
        if k in d and isinstance(d[k], list):
            d[k] = tuple(d[k])
    return d


def build_recipe(d):
    try:
        return SceneRecipe(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"recipe: {exc}") from None


def build_train(d):
    try:
        return TrainConfig(**_tuples(d, ["t_range"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


def build_optim(cfg, use_prior):
    try:
        render = RenderConfig(**cfg["render"])
        sds = None
        if use_prior:
            sd = dict(cfg["sds"])
            if sd["total_iters"] == 0:
                sd["total_iters"] = cfg["optim"]["iterations"]
            sds = SdsConfig(**sd)
        return OptimConfig(render=render, sds=sds, **_tuples(cfg["optim"], ["init_orm"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
