"""Frequency / coupling / lead-coupling sweeps and their CSV output.

A sweep runs over one or two of the axes ``omega_in``, ``g`` and ``eta``.  The
expensive part, diagonalizing ``H_S``, depends only on ``g`` (and the model
flags), so every distinct Hamiltonian is reduced once to a compact
:class:`ScattererSnapshot` (eigenenergies, channel transition amplitudes and
bound-state data) and reused by all points that share it.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, CrwScatterError, ParameterError, PoleError
from .hamiltonian import dark_mode_energies
from .model import Basis, ModelParams, enumerate_basis
from .scattering import Flows, ScatteringProblem, TransitionAmplitudes, flows, transition_amplitudes
from .spectral import DEFAULT_DENSE_LIMIT, bound_states, subspace_quasi_bound_state

log = logging.getLogger(__name__)

AXES = ("omega_in", "g", "eta")
BAND_MARGIN = 1e-4
POLE_NUDGE = 1e-7
DEFECT_LIMIT = 1e-8
FLOW_FIELDS = ("J_Te", "J_Re", "J_Tin", "J_Rin")

# per-point flags
OK, NUDGED, POLE_SKIP = "ok", "nudged", "pole_skip"


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``linspace(min, max, count)``, or an explicit value list."""

    min: float
    max: float
    count: int
    values_: tuple[float, ...] | None = None

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Grid":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ConfigError("grid value list is empty")
        return cls(min(vals), max(vals), len(vals), vals)

    def __post_init__(self):
        if self.values_ is not None:
            return
        if self.count < 1:
            raise ConfigError(f"grid count must be positive, got {self.count}")
        if self.count == 1 and self.min != self.max:
            raise ConfigError("a single-point grid needs min == max")
        if self.count >= 2 and not self.max > self.min:
            raise ConfigError(f"grid max ({self.max}) must exceed min ({self.min})")

    def values(self) -> np.ndarray:
        if self.values_ is not None:
            return np.array(self.values_)
        if self.count == 1:
            return np.array([float(self.min)])
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SweepSpec:
    base: ModelParams
    axis: str
    grids: dict
    secondary_axis: str | None = None
    rwa_compare: bool = False
    ratio_threshold: float = 0.01
    channels: tuple[int, ...] = (0, 2)
    incident: str = "left"
    method: str = "reduced"
    dense_limit: int = DEFAULT_DENSE_LIMIT
    max_dim: int = 2_000_000

    def __post_init__(self):
        for ax in self.axes:
            if ax not in AXES:
                raise ConfigError(f"unknown sweep axis {ax!r}; expected one of {AXES}")
            if ax not in self.grids:
                raise ConfigError(f"no grid given for axis {ax!r}")
        if self.secondary_axis == self.axis:
            raise ConfigError("primary and secondary axis must differ")
        if "omega_in" not in self.axes and "omega_in" not in self.grids:
            raise ConfigError("a sweep without an omega_in axis needs a fixed omega_in grid")
        if "eta" in self.grids:
            etas = self.grids["eta"].values()
            if np.any(etas <= 0) or np.any(etas > self.base.xi):
                raise ConfigError(f"eta grid must lie in (0, xi={self.base.xi}]")
        elif self.base.eta <= 0:
            raise ConfigError("eta must be positive: the scatterer is decoupled from the leads")
        if "g" in self.grids and np.any(self.grids["g"].values() < 0):
            raise ConfigError("g grid must be non-negative")
        lo, hi = self.base.band
        om = self.grids["omega_in"]
        if om.max <= lo or om.min >= hi:
            raise ConfigError(f"omega_in range [{om.min}, {om.max}] misses the band ({lo}, {hi})")
        if self.method not in ("reduced", "augmented"):
            raise ConfigError(f"unknown solve method {self.method!r}")

    @property
    def axes(self) -> tuple[str, ...]:
        return (self.axis,) if self.secondary_axis is None else (self.axis, self.secondary_axis)

    @property
    def models(self) -> tuple[str, ...]:
        if self.rwa_compare:
            return ("rwa", "full")
        return ("rwa",) if self.base.rwa_only else ("full",)

    def axis_values(self, axis: str) -> np.ndarray:
        grid = self.grids[axis]
        if axis != "omega_in":
            return grid.values()
        # clip the range (not the points) so a uniform grid stays uniform
        lo, hi = self.base.band
        lo, hi = lo + BAND_MARGIN * self.base.omega_c, hi - BAND_MARGIN * self.base.omega_c
        if grid.values_ is not None:
            return np.clip(grid.values(), lo, hi)
        if grid.count == 1:
            return np.array([min(max(grid.min, lo), hi)])
        return np.linspace(max(grid.min, lo), min(grid.max, hi), grid.count)


@dataclass(frozen=True)
class ScattererSnapshot:
    """Everything the scattering solve needs from one diagonalized ``H_S``."""

    key: tuple
    amplitudes: TransitionAmplitudes
    e0: float
    e2: float | None
    bound_energies: dict
    bound_ratios: dict
    bound_parities: dict

    def problem(self, params: ModelParams, incident: str = "left") -> ScatteringProblem:
        return ScatteringProblem(params, self.amplitudes, self.e0, self.e2, incident)


def prepare_scatterer(params: ModelParams, basis: Basis | None = None,
                      ratio_threshold: float = 0.01, channels: tuple[int, ...] = (0, 2),
                      dense_limit: int = DEFAULT_DENSE_LIMIT) -> ScattererSnapshot:
    """Diagonalize ``H_S`` and keep only the data used by the scattering solve."""
    basis = basis or enumerate_basis(params)
    spectrum, bsets = bound_states(params, basis, ratio_threshold, dense_limit)
    amp = transition_amplitudes(spectrum, bsets, basis, channels)
    e2 = bsets[2].energy if (2 in channels and bsets.get(2) is not None) else None
    return ScattererSnapshot(
        params.hamiltonian_key(), amp, bsets[0].energy, e2,
        {s.label: s.energy for s in bsets.states},
        {s.label: s.localization_ratio for s in bsets.states},
        {s.label: s.parity for s in bsets.states})


class SpectrumCache:
    """Snapshots keyed by ``(hamiltonian_key, ratio_threshold, channels)``."""

    def __init__(self):
        self._store: dict = {}
        self.misses = 0

    def key(self, params: ModelParams, threshold: float, channels) -> tuple:
        return (params.hamiltonian_key(), float(threshold), tuple(channels))

    def get(self, key):
        return self._store.get(key)

    def put(self, key, snap: ScattererSnapshot):
        self._store[key] = snap

    def __contains__(self, key) -> bool:
        return key in self._store

    def __len__(self) -> int:
        return len(self._store)


@dataclass
class SweepResult:
    """Flows on the sweep grid, one array set per model (``"rwa"``/``"full"``).

    Arrays have shape ``(len(axis1), len(axis2))`` (second dimension 1 for a
    one-axis sweep).  Failed points carry NaN flows and a non-``ok`` flag.
    """

    spec: SweepSpec
    coords: dict
    data: dict
    flags: dict
    slices: dict
    metadata: dict
    references: dict = field(default_factory=dict)

    @property
    def axes(self) -> tuple[str, ...]:
        return self.spec.axes

    @property
    def models(self) -> tuple[str, ...]:
        return self.spec.models

    @property
    def shape(self) -> tuple[int, int]:
        a1 = len(self.coords[self.axes[0]])
        a2 = len(self.coords[self.axes[1]]) if len(self.axes) == 2 else 1
        return a1, a2

    def flows_at(self, model: str, i: int, j: int = 0) -> Flows | None:
        d = self.data[model]
        if self.flags[model][i, j] == POLE_SKIP or not np.isfinite(d["J_Te"][i, j]):
            return None
        return Flows(**{f: float(d[f][i, j]) for f in FLOW_FIELDS},
                     conservation_defect=float(d["conservation_defect"][i, j]))


def _point_params(spec: SweepSpec, values: dict, rwa: bool) -> ModelParams:
    changes = {"rwa_only": rwa}
    for ax in ("g", "eta"):
        if ax in values:
            changes[ax] = float(values[ax])
    return spec.base.replace(**changes)


def _solve_point(problem: ScatteringProblem, omega: float, method: str, band: tuple[float, float]):
    """Solve one point with a single nudge off an exact pole; returns (flows, residual, flag)."""
    try:
        sol = problem.solve(omega, method)
        flag = OK
    except PoleError:
        nudged = omega + POLE_NUDGE if omega + POLE_NUDGE < band[1] else omega - POLE_NUDGE
        try:
            sol = problem.solve(nudged, method)
            flag = NUDGED
        except PoleError:
            return None, np.nan, POLE_SKIP
    try:
        fl = flows(sol)
    except CrwScatterError as exc:
        return None, sol.residual, f"error:{type(exc).__name__}"
    return fl, sol.residual, flag


def sweep(spec: SweepSpec, threads: int = 1, cache: SpectrumCache | None = None,
          basis: Basis | None = None) -> SweepResult:
    """Run the sweep; per-point solver failures are recorded, never raised."""
    t_start = time.perf_counter()
    cache = cache if cache is not None else SpectrumCache()
    basis = basis or enumerate_basis(spec.base, spec.max_dim)
    axes = spec.axes
    coords = {ax: spec.axis_values(ax) for ax in axes}
    fixed = {ax: spec.axis_values(ax)[0] for ax in spec.grids if ax not in axes}
    g_values = coords.get("g", np.array([fixed.get("g", spec.base.g)]))

    # pre-pass: one snapshot per distinct Hamiltonian, computed in parallel
    wanted = []
    for rwa in (m == "rwa" for m in spec.models):
        for g in g_values:
            p = spec.base.replace(g=float(g), rwa_only=rwa)
            k = cache.key(p, spec.ratio_threshold, spec.channels)
            if k not in cache and k not in [w[0] for w in wanted]:
                wanted.append((k, p))

    def build(item):
        return item[0], prepare_scatterer(item[1], basis, spec.ratio_threshold, spec.channels,
                                          spec.dense_limit)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for k, snap in pool.map(build, wanted):
            cache.put(k, snap)
            cache.misses += 1

    shape = (len(coords[axes[0]]), len(coords[axes[1]]) if len(axes) == 2 else 1)
    data, flags, slices = {}, {}, {}
    band = spec.base.band
    for model in spec.models:
        rwa = model == "rwa"
        points = []
        for i in range(shape[0]):
            for j in range(shape[1]):
                vals = dict(fixed)
                vals[axes[0]] = coords[axes[0]][i]
                if len(axes) == 2:
                    vals[axes[1]] = coords[axes[1]][j]
                points.append(vals)

        problems: dict = {}

        def problem_for(vals):
            p = _point_params(spec, vals, rwa)
            k = (cache.key(p, spec.ratio_threshold, spec.channels), p.eta)
            if k not in problems:
                problems[k] = cache.get(k[0]).problem(p, spec.incident)
            return problems[k]

        # problems are built serially so the worker map touches no shared state
        tasks = [(problem_for(v), float(v["omega_in"])) for v in points]

        def run(task):
            return _solve_point(task[0], task[1], spec.method, band)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            outcomes = list(pool.map(run, tasks))

        arrays = {f: np.full(shape, np.nan) for f in FLOW_FIELDS}
        arrays["conservation_defect"] = np.full(shape, np.nan)
        arrays["residual"] = np.full(shape, np.nan)
        flag_arr = np.empty(shape, dtype=object)
        for n, (fl, res, flag) in enumerate(outcomes):
            i, j = divmod(n, shape[1])
            flag_arr[i, j] = flag
            arrays["residual"][i, j] = res
            if fl is None:
                continue
            if fl.conservation_defect > DEFECT_LIMIT and flag in (OK, NUDGED):
                flag_arr[i, j] = "defect"
            for f in FLOW_FIELDS:
                arrays[f][i, j] = getattr(fl, f)
            arrays["conservation_defect"][i, j] = fl.conservation_defect
        data[model], flags[model] = arrays, flag_arr

        per_slice = []
        for g in g_values:
            snap = cache.get(cache.key(spec.base.replace(g=float(g), rwa_only=rwa),
                                       spec.ratio_threshold, spec.channels))
            per_slice.append({
                "g": float(g),
                "cache_key": repr(snap.key),
                "bound_energies": {str(k): v for k, v in sorted(snap.bound_energies.items())},
                "bound_ratios": {str(k): v for k, v in sorted(snap.bound_ratios.items())},
                "inelastic_channel": snap.e2 is not None,
            })
        slices[model] = per_slice

    metadata = {
        "params": spec.base.as_dict(),
        "axes": list(axes),
        "fixed": {k: float(v) for k, v in fixed.items()},
        "models": list(spec.models),
        "ratio_threshold": spec.ratio_threshold,
        "units": "energies and frequencies in units of omega_c",
        "basis": basis.tag,
        "spectra_computed": len(wanted),
        "elapsed_s": time.perf_counter() - t_start,
    }
    return SweepResult(spec, coords, data, flags, slices, metadata)


# --- analysis ---------------------------------------------------------------

def parabola_vertex(x: np.ndarray, y: np.ndarray) -> float:
    """Abscissa of the extremum of the parabola through three points."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
    if a == 0:
        return float(x1)
    return float(-b / (2 * a))


def slice_minimum(omega: np.ndarray, j_te: np.ndarray) -> float:
    """Refined argmin of one slice; NaN when the minimum is not interior."""
    finite = np.isfinite(j_te)
    if finite.sum() < 3 or np.ptp(j_te[finite]) == 0:
        return float("nan")
    i = int(np.nanargmin(j_te))
    if i == 0 or i == len(omega) - 1 or not np.all(finite[i - 1:i + 2]):
        return float("nan")
    v = parabola_vertex(omega[i - 1:i + 2], j_te[i - 1:i + 2])
    # keep the refinement inside the bracketing grid cells
    return float(min(max(v, omega[i - 1]), omega[i + 1]))


def transmission_minimum(result: SweepResult, model: str | None = None) -> np.ndarray:
    """``omega_min`` of the elastic transmittance for every slice of the other axis."""
    if "omega_in" not in result.axes:
        raise ParameterError("sweep has no omega_in axis")
    model = model or result.models[-1]
    j_te = result.data[model]["J_Te"]
    omega = result.coords["omega_in"]
    if result.axes[0] != "omega_in":
        j_te = j_te.T
    return np.array([slice_minimum(omega, j_te[:, k]) for k in range(j_te.shape[1])])


def overlay_references(result: SweepResult, quasi_bound: bool = False,
                       basis: Basis | None = None) -> SweepResult:
    """Attach reference lines: threshold, dark modes, minimum trace, quasi-bound level.

    The inelastic threshold per slice is ``E2 - E0 + omega_c - 2 xi`` (NaN when
    ``psi_2`` was not identified).  The quasi-bound energy is the lowest
    odd-parity level restricted to ``N_ext >= 3``, relative to ``E0``.
    """
    base = result.spec.base
    refs: dict = {"dark_modes": [(k, e) for k, e in dark_mode_energies(base)]}
    for model in result.models:
        per = {}
        thresholds = []
        for sl in result.slices[model]:
            e = sl["bound_energies"]
            if "0" in e and "2" in e:
                thresholds.append(e["2"] - e["0"] + base.omega_c - 2 * base.xi)
            else:
                thresholds.append(float("nan"))
        per["threshold"] = np.array(thresholds)
        if "omega_in" in result.axes:
            per["omega_min"] = transmission_minimum(result, model)
        if quasi_bound:
            basis = basis or enumerate_basis(base, result.spec.max_dim)
            qb = []
            for sl in result.slices[model]:
                p = base.replace(g=sl["g"], rwa_only=(model == "rwa"))
                try:
                    e0 = sl["bound_energies"].get("0")
                    qb.append(subspace_quasi_bound_state(p, 3, basis, e0).energy_rel)
                except CrwScatterError as exc:
                    log.warning("quasi-bound overlay failed at g=%s: %s", sl["g"], exc)
                    qb.append(float("nan"))
            per["quasi_bound"] = np.array(qb)
        refs[model] = per
    result.references = refs
    return result


# --- output -----------------------------------------------------------------

OUTPUT_KINDS = ("long", "paired", "total", "inelastic")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _slice_index(result: SweepResult, i: int, j: int) -> int:
    """Index into the per-g slice list for grid point (i, j)."""
    if "g" not in result.axes:
        return 0
    return i if result.axes[0] == "g" else j


def _overlay_columns(result: SweepResult, model: str) -> list[str]:
    refs = result.references
    if not refs:
        return []
    cols = [f"dark_k{k}" for k, _ in refs["dark_modes"]]
    cols += [name for name in ("threshold", "omega_min", "quasi_bound") if name in refs[model]]
    return cols


def _overlay_values(result: SweepResult, model: str, i: int, j: int) -> list:
    refs = result.references
    if not refs:
        return []
    out = [e for _, e in refs["dark_modes"]]
    s = _slice_index(result, i, j)
    # omega_min is indexed by whichever axis is not omega_in
    other = 0 if len(result.axes) == 1 else (j if result.axes[0] == "omega_in" else i)
    for name in ("threshold", "omega_min", "quasi_bound"):
        if name in refs[model]:
            out.append(refs[model][name][other if name == "omega_min" else s])
    return out


def sweep_rows(result: SweepResult, kind: str) -> tuple[list[str], list[list]]:
    """Header and rows of one output table."""
    if kind not in OUTPUT_KINDS:
        raise ConfigError(f"unknown output kind {kind!r}; expected one of {OUTPUT_KINDS}")
    axes = result.axes
    models = result.models
    n1, n2 = result.shape
    header = list(axes)
    if kind == "long":
        if len(models) > 1:
            header.append("model")
        header += list(FLOW_FIELDS) + ["conservation_defect", "residual", "flag"]
    elif kind == "paired":
        for m in models:
            header += [f"{f}_{m}" for f in FLOW_FIELDS] + [f"conservation_defect_{m}",
                                                           f"flag_{m}"]
    elif kind == "total":
        header += ["J_T", "J_Te", "conservation_defect", "flag"]
    else:
        header += ["J_Tin", "J_Rin", "flag"]
    main = models[-1]
    if kind != "paired":
        header += _overlay_columns(result, main)

    rows = []
    for i in range(n1):
        for j in range(n2):
            coord = [result.coords[axes[0]][i]]
            if len(axes) == 2:
                coord.append(result.coords[axes[1]][j])
            if kind == "long":
                for m in models:
                    d = result.data[m]
                    row = coord + ([m] if len(models) > 1 else [])
                    row += [d[f][i, j] for f in FLOW_FIELDS]
                    row += [d["conservation_defect"][i, j], d["residual"][i, j],
                            result.flags[m][i, j]]
                    rows.append(row + _overlay_values(result, m, i, j))
                continue
            if kind == "paired":
                row = list(coord)
                for m in models:
                    d = result.data[m]
                    row += [d[f][i, j] for f in FLOW_FIELDS]
                    row += [d["conservation_defect"][i, j], result.flags[m][i, j]]
                rows.append(row)
                continue
            d = result.data[main]
            if kind == "total":
                row = coord + [d["J_Te"][i, j] + d["J_Tin"][i, j], d["J_Te"][i, j],
                               d["conservation_defect"][i, j], result.flags[main][i, j]]
            else:
                row = coord + [d["J_Tin"][i, j], d["J_Rin"][i, j], result.flags[main][i, j]]
            rows.append(row + _overlay_values(result, main, i, j))
    return header, rows


def write_sweep_csv(result: SweepResult, path: str | Path, kind: str = "long",
                    comments: Sequence[str] = ()) -> None:
    """Write one table; ``comments`` become leading ``# `` lines."""
    header, rows = sweep_rows(result, kind)
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def sweep_metadata(result: SweepResult) -> dict:
    """Reproducible metadata record (no wall-clock data)."""
    meta = {k: v for k, v in result.metadata.items() if k != "elapsed_s"}
    meta["grids"] = {ax: {"min": float(result.coords[ax][0]), "max": float(result.coords[ax][-1]),
                          "count": int(len(result.coords[ax]))} for ax in result.axes}
    meta["slices"] = result.slices
    counts = {}
    for m in result.models:
        flags, n = np.unique(result.flags[m].astype(str), return_counts=True)
        counts[m] = {str(f): int(c) for f, c in zip(flags, n)}
    meta["flag_counts"] = counts
    if result.references:
        meta["dark_modes"] = [[int(k), float(e)] for k, e in result.references["dark_modes"]]
    return meta


def write_metadata(meta: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
