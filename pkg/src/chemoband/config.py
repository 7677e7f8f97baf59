"""Run specifications: sectioned JSON or TOML files, presets and flag overrides.

Precedence, lowest first: built-in defaults, preset, config file, flags.
A run manifest written by the CLI is also accepted as a config file; its
embedded spec is reused verbatim.
"""
from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .errors import ParseError, ValidationError
from .model import BandParams, ModelParams, PerturbParams, regime_for

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

#: Reference parameter set (hours, cm) with d = 1.3.
TABLE1 = {
    "model": {"tau": 0.05, "mu": 0.25, "beta": 0.1625, "k": 1.0},
    "band": {"c": 1.5, "c0": 4.0, "v_inf": 1.0},
}

PRESETS = {"table1": TABLE1}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model": {
        "tau": 0.05,
        "mu": 0.25,
        "beta": 0.1625,
        "d": None,
        "big_d": 0.0,
        "k": 1.0,
        "regime": "unlimited",
    },
    "band": {
        "c": 1.5,
        "c0": 4.0,
        "v_inf": 1.0,
        "zeta_min": -20.0,
        "zeta_max": 20.0,
        "n_points": 801,
    },
    "perturb": {
        "u0": 1.0,
        "v0": 1.0,
        "a": 0.2,
        "d_deg": 0.5,
        "ell": 1.0,
        "n_max": 5,
    },
    "solver": {
        "x_min": -15.0,
        "x_max": 15.0,
        "h": 0.01,
        "dt": None,
        "t_end": 1.0,
        "scheme": "semi_implicit",
        "imex": "cnab2",
        "theta": 1.0,
        "n_snapshots": 11,
    },
    "run": {
        "seed": 0,
        "format": "csv",
        "n_particles": 100000,
        "n_steps": 100,
        "bin_width": 0.1,
        "walk_drift": "none",
        "walk_ell": 3.5355339059327378,
        "n_pairs": 200,
        "delta_start": 0.5,
        "n_halvings": 8,
    },
}

_STRINGS = {("model", "regime"), ("solver", "scheme"), ("solver", "imex"), ("run", "format"), ("run", "walk_drift")}
_INTS = {("band", "n_points"), ("perturb", "n_max"), ("solver", "n_snapshots"), ("run", "seed"),
         ("run", "n_particles"), ("run", "n_steps"), ("run", "n_pairs"), ("run", "n_halvings")}
_CHOICES = {
    ("model", "regime"): ("unlimited", "limited"),
    ("solver", "scheme"): ("semi_implicit", "fully_explicit"),
    ("solver", "imex"): ("cnab2", "euler"),
    ("run", "format"): ("csv", "json"),
    ("run", "walk_drift"): ("none", "log_v"),
}


@dataclass(frozen=True)
class RunSpec:
    """Fully resolved, validated run specification."""

    sections: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, name):
        return self.sections[name]

    def to_dict(self) -> dict:
        return copy.deepcopy({k: dict(v) for k, v in self.sections.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def seed(self) -> int:
        return int(self.sections["run"]["seed"])

    @property
    def limited(self) -> bool:
        return self.sections["model"]["regime"] == "limited"

    def model_params(self) -> ModelParams:
        m = self.sections["model"]
        if m["d"] is not None:
            return ModelParams.from_d(m["d"], tau=m["tau"], mu=m["mu"], big_d=m["big_d"], k=m["k"])
        return ModelParams(tau=m["tau"], mu=m["mu"], beta=m["beta"], big_d=m["big_d"], k=m["k"])

    def band_params(self) -> BandParams:
        b = self.sections["band"]
        mp = self.model_params()
        return BandParams(b["c"], b["c0"], b["v_inf"], regime_for(mp.d_ratio, self.limited))

    def perturb_params(self) -> PerturbParams:
        p = self.sections["perturb"]
        return PerturbParams(p["u0"], p["v0"], p["a"], p["d_deg"], p["ell"])


def _load_text(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: invalid TOML", getattr(exc, "lineno", None), getattr(exc, "colno", None)) from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a table of sections", 1, 1)
    if "spec" in data and "spec_sha256" in data:
        data = data["spec"]
    return data


def _coerce(section, key, value):
    if value is None:
        if DEFAULTS[section][key] is None:
            return None
        raise ValidationError(f"{section}.{key} may not be null")
    if (section, key) in _STRINGS:
        if not isinstance(value, str):
            raise ValidationError(f"{section}.{key} must be a string")
        choices = _CHOICES.get((section, key))
        if choices and value not in choices:
            raise ValidationError(f"{section}.{key} must be one of {choices}, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{section}.{key} must be a number, got {value!r}")
    if (section, key) in _INTS:
        if int(value) != value:
            raise ValidationError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{section}.{key} must be finite")
    return value


def _merge(target, data, origin):
    for section, values in data.items():
        if section not in DEFAULTS:
            raise ValidationError(f"{origin}: unknown section [{section}]")
        if not isinstance(values, Mapping):
            raise ValidationError(f"{origin}: section [{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ValidationError(f"{origin}: unknown key {section}.{key}")
            target[section][key] = _coerce(section, key, value)
        if section == "model" and "beta" in values and "d" not in values:
            target["model"]["d"] = None


def parse_config(
    path=None,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> RunSpec:
    """Resolve defaults, preset, file and overrides into a validated :class:`RunSpec`.

    Raises
    ------
    ParseError
        The file is not valid JSON/TOML (line and column attached).
    ValidationError
        Unknown sections or keys, wrong types, or invalid parameter values.
    FileNotFoundError
        ``path`` does not exist.
    """
    sections = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        _merge(sections, PRESETS[preset], f"preset {preset}")
    if path is not None:
        path = Path(path)
        _merge(sections, _load_text(path), str(path))
    if overrides:
        _merge(sections, {k: v for k, v in overrides.items() if v}, "command line")
    spec = RunSpec(sections)
    _validate(spec)
    return spec


def _validate(spec: RunSpec) -> None:
    spec.model_params()
    spec.perturb_params()
    b = spec["band"]
    for name in ("c", "c0", "v_inf"):
        if not b[name] > 0.0:
            from .errors import NonPositiveParameter

            raise NonPositiveParameter(name, b[name])
    if not b["zeta_max"] > b["zeta_min"]:
        raise ValidationError("band.zeta_max must exceed band.zeta_min")
    if b["n_points"] < 2:
        raise ValidationError("band.n_points must be at least 2")
    s = spec["solver"]
    if not s["x_max"] > s["x_min"]:
        raise ValidationError("solver.x_max must exceed solver.x_min")
    for name in ("h", "t_end"):
        if not s[name] > 0.0:
            raise ValidationError(f"solver.{name} must be positive")
    if s["dt"] is not None and not s["dt"] > 0.0:
        raise ValidationError("solver.dt must be positive")
    r = spec["run"]
    for name in ("n_particles", "n_pairs", "n_halvings"):
        if r[name] < 1:
            raise ValidationError(f"run.{name} must be positive")
    if r["n_steps"] < 0 or r["seed"] < 0:
        raise ValidationError("run.n_steps and run.seed must be non-negative")
    if not (r["bin_width"] > 0.0 and r["delta_start"] > 0.0 and r["walk_ell"] > 0.0):
        raise ValidationError("run.bin_width, run.delta_start and run.walk_ell must be positive")
