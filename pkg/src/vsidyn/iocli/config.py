"""JSON run configuration: parsing, validation and preset defaults."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..dynamics import ModelConfig, RateSet
from ..presets import PUMP_50UW, PUMP_815UW, RATE_PRESETS, STRAIN_PRESETS
from ..sequences import EXPERIMENTS, make_experiment
from ..spincore import D_EXCITED, D_GROUND, StrainParams

TOP_KEYS = {"model", "experiment", "datasets", "fit", "abc", "sweep", "lineshape", "output", "seed"}
TASK_KEYS = ("experiment", "datasets", "fit", "sweep", "lineshape")
MODEL_KEYS = {"preset", "rates", "strain", "d_ground", "d_excited", "efficiency", "dark_rate"}
OUTPUT_KEYS = {"directory", "formats"}
FORMATS = {"csv", "json"}

#: model presets: (rate preset, strain preset, pump family)
MODEL_PRESETS = {
    "no_strain": ("table2_no_strain", "none", "no_strain"),
    "strain": ("table2_strain", "table1_strain", "strain"),
}

# experiment kinds that sit behind the 730 nm pump and which power they use
PUMPED = {"metastable_decay": PUMP_815UW, "repolarization": PUMP_50UW, "spin_depletion": PUMP_50UW}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    family: str
    raw: dict
    experiment: dict | None = None
    datasets: list[dict] = field(default_factory=list)
    fit: dict | None = None
    abc: dict | None = None
    sweep: dict | None = None
    lineshape: dict | None = None
    output_dir: str = "results"
    formats: tuple[str, ...] = ("csv", "json")
    seed: int = 0

    def require(self, section: str) -> dict:
        value = getattr(self, section)
        if not value:
            raise ConfigError(f"this command needs a '{section}' section in the configuration")
        return value


def _reject_unknown(obj: dict, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"'{where}' must be an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in '{where}': {extra}; allowed: {sorted(allowed)}")


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {value!r}")
    return float(value)


def build_rates(spec, default: str) -> RateSet:
    if spec is None:
        spec = default
    if isinstance(spec, str):
        try:
            return RATE_PRESETS[spec]
        except KeyError:
            raise ConfigError(f"unknown rate preset {spec!r}; choose from {sorted(RATE_PRESETS)}") from None
    allowed = {f.name for f in fields(RateSet)} | {"preset"}
    _reject_unknown(spec, allowed, "model.rates")
    base = build_rates(spec.get("preset", default), default)
    changes = {k: _number(v, f"model.rates.{k}") for k, v in spec.items() if k != "preset"}
    try:
        return base.replace(**changes)
    except ValueError as exc:
        raise ConfigError(f"model.rates: {exc}") from None


def build_strain(spec, default: str) -> StrainParams:
    if spec is None:
        spec = default
    if isinstance(spec, str):
        try:
            return STRAIN_PRESETS[spec]
        except KeyError:
            raise ConfigError(f"unknown strain preset {spec!r}; choose from {sorted(STRAIN_PRESETS)}") from None
    allowed = {"preset", "pi_z", "pi_1", "pi_2", "theta"}
    _reject_unknown(spec, allowed, "model.strain")
    base = build_strain(spec.get("preset", default), default).as_dict()
    base.update({k: _number(v, f"model.strain.{k}") for k, v in spec.items() if k != "preset"})
    try:
        return StrainParams(**base)
    except ValueError as exc:
        raise ConfigError(f"model.strain: {exc}") from None


def build_model(section: dict, preset_override: str | None = None) -> tuple[ModelConfig, str]:
    _reject_unknown(section, MODEL_KEYS, "model")
    preset = preset_override or section.get("preset", "no_strain")
    if preset not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {preset!r}; choose from {sorted(MODEL_PRESETS)}")
    rate_default, strain_default, family = MODEL_PRESETS[preset]
    rates = build_rates(section.get("rates"), rate_default)
    strain = build_strain(section.get("strain"), strain_default)
    if isinstance(section.get("rates"), str) and section["rates"] == "table2_strain":
        family = "strain"
    kw = {}
    for key, default in (("d_ground", D_GROUND), ("d_excited", D_EXCITED), ("efficiency", 1.0), ("dark_rate", 0.0)):
        kw[key] = _number(section.get(key, default), f"model.{key}")
    try:
        cfg = ModelConfig.build(rates, strain, **kw)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg, family


def experiment_descriptor(spec: dict, family: str, where: str = "experiment"):
    """Descriptor for a config experiment block, pump defaults from the family presets."""
    _reject_unknown(spec, {"name", "params", "exposure"}, where)
    if "exposure" in spec and not _number(spec["exposure"], f"{where}.exposure") > 0:
        raise ConfigError(f"{where}.exposure must be > 0")
    if "name" not in spec:
        raise ConfigError(f"'{where}' needs a 'name' (one of {sorted(EXPERIMENTS)})")
    name = spec["name"]
    params = dict(spec.get("params", {}))
    if name in PUMPED and "offres_pump" not in params:
        pump = PUMPED[name][family]
        params.setdefault("offres_pump", pump.offres_pump)
        params.setdefault("offres_gamma_3p", pump.offres_gamma_3p)
        params.setdefault("offres_gamma_4p", pump.offres_gamma_4p)
    try:
        return make_experiment(name, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    if not text.strip():
        raise ConfigError(
            f"{source}: configuration is empty; required keys: 'model' plus one of {list(TASK_KEYS)}"
        )
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return data


def from_dict(data: dict, preset: str | None = None) -> RunConfig:
    _reject_unknown(data, TOP_KEYS, "<top level>")
    missing = [k for k in ("model",) if k not in data]
    if missing or not any(k in data for k in TASK_KEYS):
        raise ConfigError(f"missing required keys: 'model' plus one of {list(TASK_KEYS)}")
    model, family = build_model(data["model"], preset)
    out = data.get("output", {})
    _reject_unknown(out, OUTPUT_KEYS, "output")
    formats = tuple(out.get("formats", ("csv", "json")))
    if not set(formats) <= FORMATS:
        raise ConfigError(f"output.formats {list(formats)} must be a subset of {sorted(FORMATS)}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer")
    cfg = RunConfig(
        model=model,
        family=family,
        raw=data,
        experiment=data.get("experiment"),
        datasets=list(data.get("datasets", [])),
        fit=data.get("fit"),
        abc=data.get("abc"),
        sweep=data.get("sweep"),
        lineshape=data.get("lineshape"),
        output_dir=str(out.get("directory", "results")),
        formats=formats,
        seed=seed,
    )
    if cfg.experiment is not None:
        experiment_descriptor(cfg.experiment, family)
    for i, ds in enumerate(cfg.datasets):
        experiment_descriptor(ds, family, f"datasets[{i}]")
    return cfg


def load_config(path: str | Path, preset: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return from_dict(parse_text(text, str(path)), preset)


def linspace_spec(spec, key: str) -> np.ndarray:
    """A list of numbers or {"start", "stop", "num"}."""
    if isinstance(spec, dict):
        _reject_unknown(spec, {"start", "stop", "num"}, key)
        try:
            return np.linspace(_number(spec["start"], key), _number(spec["stop"], key), int(spec["num"]))
        except KeyError as exc:
            raise ConfigError(f"'{key}' needs start, stop and num (missing {exc})") from None
    if isinstance(spec, list) and spec:
        return np.array([_number(v, key) for v in spec])
    raise ConfigError(f"'{key}' must be a non-empty list or a start/stop/num object")
