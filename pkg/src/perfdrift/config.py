"""Flat dotted-key configuration: defaults, TOML loading, ``key=value`` overrides, manifests."""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import tomli
import tomli_w

from . import __version__
from .drift import DriftRegime, IzzoParams
from .errors import ConfigError
from .gdan import GdanHyperParams
from .simulate import SimulationConfig

_GDAN_DEFAULTS = GdanHyperParams()

# key -> (default, accepted types); a default of None means "resolved at run time"
SCHEMA: dict[str, tuple[object, tuple]] = {
    "generator": ("perdomo", (str,)),
    "seed": (0, (int,)),
    "n_iterations": (10, (int,)),
    "n_points": (10000, (int,)),
    "n_repetitions": (10, (int,)),
    "data_source": ("surrogate", (str,)),
    "raw_dump": (True, (bool,)),
    "regime.kind": (None, (str,)),
    "regime.retrain_period": (None, (int,)),
    "drift.epsilon": (None, (float,)),
    "drift.target_l1": (0.107, (float,)),
    "drift.mask_rule": (None, (str,)),
    "drift.n_performative": (5, (int,)),
    "drift.mask": (None, (list,)),
    "izzo.mu0": ([0.0, 0.0], (list,)),
    "izzo.mu1": ([2.0, 2.0], (list,)),
    "izzo.sigma0": (0.5, (float,)),
    "izzo.sigma1": (0.5, (float,)),
    "izzo.class_balance": (0.5, (float,)),
    "logreg.epochs": (300, (int,)),
    "logreg.lr": (1.0, (float,)),
    "eval.retrain_split": (0.7, (float,)),
    "sensitivity.sizes": ([5000, 10000, 20000, 40000], (list,)),
    "export.iterations": ([0, 9], (list,)),
    "meta.version": (__version__, (str,)),
    "meta.command": ("run", (str,)),
}
for _f in fields(GdanHyperParams):
    _v = getattr(_GDAN_DEFAULTS, _f.name)
    SCHEMA[f"gdan.{_f.name}"] = (_v, (type(_v),))

# regime defaults differ per generator: the spam generator cycles with retraining
_REGIME_DEFAULTS = {"perdomo": ("monotonous", 1), "izzo": ("dynamic", 3)}


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _unflatten(flat: dict) -> dict:
    tree: dict = {}
    for key, value in flat.items():
        if value is None:
            continue
        node = tree
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def _check_value(key: str, value):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    _, types = SCHEMA[key]
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if bool not in types and isinstance(value, bool):
        raise ConfigError(f"{key!r} expects {types[0].__name__}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{key!r} expects {types[0].__name__}, got {type(value).__name__} {value!r}")
    return value


def load_config(path) -> dict:
    """Read a TOML file into a validated flat dict (file values only, no defaults)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        tree = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from None
    return {k: _check_value(k, v) for k, v in _flatten(tree).items()}


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value read as a TOML literal, falling back to a bare string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, _check_value(key, value)


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then overrides; generator-dependent defaults filled in."""
    flat = {k: v for k, (v, _) in SCHEMA.items()}
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            flat[k] = _check_value(k, v)
    gen = flat["generator"]
    if gen not in _REGIME_DEFAULTS:
        raise ConfigError(f"'generator' must be 'perdomo' or 'izzo', got {gen!r}")
    kind, period = _REGIME_DEFAULTS[gen]
    if flat["regime.kind"] is None:
        flat["regime.kind"] = kind
    if flat["regime.retrain_period"] is None:
        flat["regime.retrain_period"] = period
    if flat["drift.mask_rule"] is None:
        flat["drift.mask_rule"] = "smallest" if gen == "perdomo" else "all"
    return flat


def build_simulation_config(flat: dict) -> SimulationConfig:
    """Turn a resolved flat dict into a SimulationConfig; bad values raise ConfigError."""
    gdan = {k[5:]: v for k, v in flat.items() if k.startswith("gdan.")}
    try:
        return SimulationConfig(
            generator=flat["generator"],
            regime=DriftRegime(flat["regime.kind"], flat["regime.retrain_period"]),
            n_iterations=flat["n_iterations"],
            n_points=flat["n_points"],
            n_repetitions=flat["n_repetitions"],
            gdan=GdanHyperParams(**gdan),
            seed=flat["seed"],
            data_source=flat["data_source"],
            epsilon=flat["drift.epsilon"],
            target_l1=flat["drift.target_l1"],
            mask=flat["drift.mask"],
            mask_rule=flat["drift.mask_rule"],
            n_performative=flat["drift.n_performative"],
            izzo=IzzoParams(flat["izzo.mu0"], flat["izzo.mu1"], flat["izzo.sigma0"],
                            flat["izzo.sigma1"], flat["izzo.class_balance"]),
            logreg_epochs=flat["logreg.epochs"],
            logreg_lr=flat["logreg.lr"],
            retrain_split=flat["eval.retrain_split"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def write_manifest(flat: dict, path) -> None:
    """Resolved configuration as TOML; unset optional keys are left out."""
    with open(path, "wb") as fh:
        tomli_w.dump(_unflatten(dict(sorted(flat.items()))), fh)
