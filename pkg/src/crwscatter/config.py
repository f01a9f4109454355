"""Run configuration: YAML files validated against the shipped JSON schema.

Built-in presets live in ``crwscatter/presets/<name>.yaml``.  Missing keys are
filled from :data:`DEFAULTS`; the resolved configuration is hashed so every
output file can be traced back to it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigError, CrwScatterError
from .model import ModelParams
from .sweeps import Grid, SweepSpec

DEFAULTS = {
    "model": {
        "n_cavities": 7, "omega_c": 1.0, "omega_a": 1.0, "xi": 0.23, "eta": 0.23, "g": 0.0,
        "max_excitation": 7, "rwa_only": False,
    },
    "limits": {"max_dim": 2_000_000, "dense_limit": 8000},
    "bound_states": {"threshold": 0.01, "bwpt": False, "bwpt_tolerance": 1e-2},
    "spectrum": {"sector": "both", "quasi_bound": False, "min_excitation": 3},
    "scatter": {"omega_in": 1.0, "method": "reduced", "incident": "left", "ratio_threshold": 0.02},
    "validate": {"grid_points": 25, "tolerance": 1e-8, "fault": None},
}

SWEEP_DEFAULTS = {"rwa_compare": False, "ratio_threshold": 0.02, "method": "reduced",
                  "incident": "left", "outputs": ["long"], "overlays": False,
                  "quasi_bound": False}


def _load_schema() -> dict:
    text = resources.files("crwscatter").joinpath("config_schema.json").read_text()
    return json.loads(text)


SCHEMA = _load_schema()


def preset_names() -> list[str]:
    folder = resources.files("crwscatter").joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return resources.files("crwscatter").joinpath("presets").joinpath(f"{name}.yaml").read_text()


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_raw(raw) -> None:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from None


def _grid(spec: dict) -> Grid:
    if "values" in spec:
        return Grid.from_values(spec["values"])
    return Grid(float(spec["min"]), float(spec["max"]), int(spec["count"]))


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated configuration (plain dict plus typed views)."""

    data: dict
    source: str

    @property
    def model(self) -> ModelParams:
        m = self.data["model"]
        try:
            return ModelParams(**m)
        except CrwScatterError as exc:
            raise ConfigError(f"invalid model parameters: {exc}") from None

    @property
    def hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def sweep_spec(self) -> SweepSpec:
        if "sweep" not in self.data:
            raise ConfigError("configuration has no 'sweep' section")
        s = self.data["sweep"]
        lim = self.data["limits"]
        grids = {ax: _grid(g) for ax, g in s["grids"].items()}
        try:
            return SweepSpec(self.model, s["axis"], grids, s.get("secondary_axis"),
                             s["rwa_compare"], s["ratio_threshold"], incident=s["incident"],
                             method=s["method"], dense_limit=lim["dense_limit"],
                             max_dim=lim["max_dim"])
        except ConfigError:
            raise
        except CrwScatterError as exc:
            raise ConfigError(str(exc)) from None

    def bound_state_grid(self) -> Grid:
        g = self.data["bound_states"].get("g_grid")
        if g is None:
            return Grid(self.model.g, self.model.g, 1)
        return _grid(g)


def resolve(raw: dict, source: str = "<dict>", rwa: bool = False) -> RunConfig:
    """Validate ``raw``, fill defaults, apply CLI overrides and re-check physics."""
    validate_raw(raw)
    data = _merge(DEFAULTS, raw)
    if "sweep" in data:
        data["sweep"] = _merge(SWEEP_DEFAULTS, data["sweep"])
    if rwa:
        data["model"]["rwa_only"] = True
        if "sweep" in data:
            data["sweep"]["rwa_compare"] = False
    cfg = RunConfig(data, source)
    cfg.model  # re-check the physical invariants at load time
    if "sweep" in data:
        cfg.sweep_spec()
    return cfg


def load_config(path: str | Path | None = None, preset: str | None = None,
                rwa: bool = False) -> RunConfig:
    """Load from a YAML file, a preset name, or neither (pure defaults)."""
    if path is not None and preset is not None:
        raise ConfigError("give either a config file or a preset, not both")
    if preset is not None:
        text, source = preset_text(preset), f"preset:{preset}"
    elif path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        source = str(path)
    else:
        return resolve({}, "<defaults>", rwa)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    return resolve(raw if raw is not None else {}, source, rwa)
