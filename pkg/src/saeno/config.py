"""TOML run configuration with defaults, type checks and dotted overrides.

A config file has top-level keys ``command``, ``seed`` and ``log_level``
and the tables ``[paths]``, ``[model]``, ``[data]``, ``[encoder]``,
``[arch]``, ``[train]``, ``[experiment]`` (with ``[experiment.sweep]``) and
``[equiv]`` (with ``[equiv.instance]``). Every table is optional; missing
keys take the defaults below. Unknown keys are rejected.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .architectures import EncoderConfig
from .errors import ConfigError, InvalidArgumentError
from .experiments import ExperimentSpec
from .genmodel import ConvModelSpec, DenseModelSpec
from .training import ArchConfig, TrainConfig

COMMANDS = ("gen", "train", "eval", "equiv", "exp")
REQUIRED = object()

# key -> (type, default); float keys accept integers, None means "unset".
SCHEMA = {
    "": {"command": (str, None), "seed": (int, 0), "log_level": (str, "info")},
    "paths": {"input": (str, ""), "output": (str, ""), "checkpoint": (str, "")},
    "data": {"n_samples": (int, 1000), "max_elements": (int, 1 << 28)},
    "encoder": {"depth": (int, 50), "step": (float, 0.2), "threshold": (float, 0.5),
                "nonlinearity": (str, "jump_relu"), "two_sided": (bool, False)},
    "arch": {"family": (str, None), "d_lift": (int, None), "lifting": (str, "orthonormal"),
             "modes_kept": (int, None), "decoder_norm": (str, "inv_sqrt")},
    "train": {"lr": (float, 1e-3), "epochs": (int, 20), "batch_size": (int, 1),
              "init_noise": (float, 0.02), "normalize_atoms": (bool, False),
              "train_lifting": (bool, False), "lifting_lr_scale": (float, 1.0)},
    "experiment": {"id": (str, REQUIRED), "threshold": (float, 0.05), "eval_samples": (int, 50),
                   "reinterpolate_arm": (bool, False), "cross_check_steps": (int, 20),
                   "fno_lr": (float, None), "record_wall_time": (bool, False)},
    "experiment.sweep": {"arms": (list, None), "smoothness": (list, None),
                         "modes_kept": (list, None), "factors": (list, None),
                         "support_matched": (list, None)},
    "equiv": {"check": (str, "arch_lifted"), "regime": (str, "dense"), "steps": (int, 5),
              "lifting": (str, "orthonormal"), "support_matched": (bool, False),
              "report_only": (bool, False), "lr": (float, None), "tolerance": (float, 1e-10),
              "range_condition": (bool, True)},
    "equiv.instance": {k: (int, None) for k in (
        "m", "p", "k", "d_lift", "depth", "channels", "resolution", "num_kernels", "support")},
}

MODEL_SCHEMA = {
    "dense": {"regime": (str, REQUIRED), "m": (int, REQUIRED), "p": (int, REQUIRED),
              "k": (int, REQUIRED), "amp_mean": (float, 15.0), "amp_std": (float, 1.0)},
    "conv": {"regime": (str, REQUIRED), "channels": (int, REQUIRED),
             "resolution": (int, REQUIRED), "num_kernels": (int, REQUIRED),
             "support": (int, REQUIRED), "per_map_sparsity": (int, 1),
             "amp_mean": (float, 15.0), "amp_std": (float, 1.0), "smoothness": (float, None)},
}


@dataclass
class RunConfig:
    command: Optional[str] = None
    seed: int = 0
    log_level: str = "info"
    paths: dict = field(default_factory=dict)
    model: object = None
    n_samples: int = 1000
    max_elements: int = 1 << 28
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: Optional[ExperimentSpec] = None
    record_wall_time: bool = False
    equiv: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    source: str = "<string>"


class _Locator:
    """Best-effort line lookup for ``table.key`` in TOML text."""

    def __init__(self, text, source):
        self.source = source
        self.lines = text.splitlines()

    def where(self, table, key):
        current = ""
        for n, line in enumerate(self.lines, start=1):
            stripped = line.strip()
            m = re.match(r"^\[\s*([^\]]+?)\s*\]$", stripped)
            if m:
                current = m.group(1).replace(" ", "")
                continue
            if current == table and re.match(rf"^{re.escape(key)}\s*=", stripped):
                return f"{self.source}:{n}"
        return self.source

    def error(self, table, key, message):
        dotted = f"{table}.{key}" if table else key
        return ConfigError(f"{self.where(table, key)}: key '{dotted}': {message}")


def _typed(value, kind, loc, table, key):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise loc.error(table, key, f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise loc.error(table, key, f"expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        raise loc.error(table, key, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _section(raw, table, schema, loc):
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            continue
        if key not in schema:
            raise loc.error(table, key, "unknown key")
        out[key] = _typed(value, schema[key][0], loc, table, key)
    for key, (_, default) in schema.items():
        if key not in out:
            if default is REQUIRED:
                raise loc.error(table, key, "missing required key")
            out[key] = default
    return out


def _table(raw, name, loc):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise loc.error("", name, "expected a table")
    return value


def _check_subtables(raw, table, allowed, loc):
    for key, value in raw.items():
        if isinstance(value, dict) and key not in allowed:
            raise loc.error(table, key, "unknown table")


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides):
    """Apply ``section.key=value`` strings to a parsed TOML mapping in place."""
    for item in overrides or ():
        item = item[2:] if item.startswith("--") else item
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        path, text = item.split("=", 1)
        parts = [p for p in path.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r}: empty key")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a table")
        node[parts[-1]] = _parse_value(text.strip())
    return raw


def parse_config_text(text, source="<string>", overrides=None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    apply_overrides(raw, overrides)
    loc = _Locator(text, source)
    _check_subtables(raw, "", {"paths", "model", "data", "encoder", "arch", "train",
                               "experiment", "equiv"}, loc)
    top = _section(raw, "", SCHEMA[""], loc)
    if top["command"] is not None and top["command"] not in COMMANDS:
        raise loc.error("", "command", f"must be one of {', '.join(COMMANDS)}")
    cfg = RunConfig(command=top["command"], seed=top["seed"], log_level=top["log_level"],
                    raw=raw, source=source)
    for name in ("paths", "data", "encoder", "arch", "train"):
        table = _table(raw, name, loc)
        _check_subtables(table, name, set(), loc)
        values = _section(table, name, SCHEMA[name], loc)
        if name == "paths":
            cfg.paths = values
        elif name == "data":
            cfg.n_samples, cfg.max_elements = values["n_samples"], values["max_elements"]
        elif name == "encoder":
            cfg.encoder = EncoderConfig(**values)
        elif name == "arch":
            cfg.arch = ArchConfig(**values)
        else:
            cfg.train = TrainConfig(seed=cfg.seed, **values)

    model_raw = _table(raw, "model", loc)
    if model_raw:
        _check_subtables(model_raw, "model", set(), loc)
        regime = model_raw.get("regime")
        if regime not in MODEL_SCHEMA:
            raise loc.error("model", "regime", f"must be 'dense' or 'conv', got {regime!r}")
        values = _section(model_raw, "model", MODEL_SCHEMA[regime], loc)
        values.pop("regime")
        cls = DenseModelSpec if regime == "dense" else ConvModelSpec
        cfg.model = cls(seed=cfg.seed, **values)

    equiv_raw = _table(raw, "equiv", loc)
    _check_subtables(equiv_raw, "equiv", {"instance"}, loc)
    cfg.equiv = _section(equiv_raw, "equiv", SCHEMA["equiv"], loc)
    instance = _section(_table(equiv_raw, "instance", loc), "equiv.instance",
                        SCHEMA["equiv.instance"], loc)
    cfg.equiv["instance"] = {k: v for k, v in instance.items() if v is not None}

    exp_raw = _table(raw, "experiment", loc)
    if exp_raw:
        _check_subtables(exp_raw, "experiment", {"sweep"}, loc)
        values = _section(exp_raw, "experiment", SCHEMA["experiment"], loc)
        sweep = _section(_table(exp_raw, "sweep", loc), "experiment.sweep",
                         SCHEMA["experiment.sweep"], loc)
        cfg.record_wall_time = values.pop("record_wall_time")
        if cfg.model is None:
            raise loc.error("model", "regime", "an experiment needs a [model] table")
        cfg.experiment = ExperimentSpec(
            model=cfg.model, encoder=cfg.encoder, train=cfg.train, arch=cfg.arch,
            n_samples=cfg.n_samples, seed=cfg.seed,
            sweep={k: v for k, v in sweep.items() if v is not None}, **values)
    try:
        _validate(cfg)
    except InvalidArgumentError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def _validate(cfg: RunConfig):
    cfg.encoder.validate()
    cfg.train.validate()
    if cfg.model is not None:
        cfg.model.validate()
    if cfg.experiment is not None:
        cfg.experiment.validate()


def parse_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path), overrides)


def preset_names():
    root = resources.files("saeno.presets")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_path(name):
    return resources.files("saeno.presets") / f"{name}.cfg"


def load_preset(name, overrides=None) -> RunConfig:
    ref = preset_path(name)
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config_text(ref.read_text(encoding="utf-8"), f"preset:{name}", overrides)
