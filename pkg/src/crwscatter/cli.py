"""Command-line entry point: ``crwscatter <command> [--config PATH | --preset NAME]``.

Every command writes its files into a private staging directory first and
moves them into ``--out`` only after the whole command succeeded, so a failed
run leaves no partial output.  Errors are reported on stderr as one JSON
record and give a nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, preset_names
from .errors import ConfigError, CrwScatterError
from .hamiltonian import build_sc_hamiltonian, dark_mode_energies, mode_coupling, mode_frequency
from .model import enumerate_basis
from .spectral import (block_localization_ratios, bwpt_bound_energy, classify_bound_states,
                       diagonalize, export_bound_state_rows, export_profile,
                       subspace_quasi_bound_state)
from .sweeps import (overlay_references, prepare_scatterer, sweep, sweep_metadata,
                     write_metadata, write_sweep_csv)
from .validation import run_validation

log = logging.getLogger("crwscatter")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_VALIDATION = 1, 2, 3


class Staging:
    """Collects output files in a temp dir and publishes them atomically-per-file."""

    def __init__(self, out: Path, cfg: RunConfig):
        self.out = out
        self.cfg = cfg
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def comments(self) -> list[str]:
        return [f"config_hash: {self.cfg.hash}", f"source: {self.cfg.source}",
                f"crwscatter {__version__}; energies in units of omega_c"]

    def write_json(self, name: str, payload: dict) -> None:
        payload = dict(payload)
        payload["config_hash"] = self.cfg.hash
        payload["code_version"] = __version__
        payload["config"] = self.cfg.data
        write_metadata(payload, self.path(name))

    def write_rows(self, name: str, header: list[str], rows: list[list]) -> None:
        with open(self.path(name), "w", newline="") as fh:
            for c in self.comments():
                fh.write(f"# {c}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])

    def commit(self) -> list[Path]:
        done = []
        for name in self.names:
            target = self.out / name
            os.replace(self.tmp / name, target)
            done.append(target)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return done

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


# --- commands -------------------------------------------------------------

def cmd_bound_states(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    params = cfg.model
    sect = cfg.section("bound_states")
    lim = cfg.section("limits")
    basis = enumerate_basis(params, lim["max_dim"])
    rows = []
    disagreements = []
    for g in cfg.bound_state_grid().values():
        p = params.replace(g=float(g))
        spec = diagonalize(build_sc_hamiltonian(p, basis), "both", lim["dense_limit"])
        bs = classify_bound_states(spec, basis, p, sect["threshold"])
        row = {"g": float(g)}
        for label in (0, 1, 2):
            st = bs.get(label)
            row[f"E{label}"] = st.energy if st else float("nan")
        for label in (0, 1, 2):
            st = bs.get(label)
            row[f"parity{label}"] = ("+" if st.parity > 0 else "-") if st else ""
        for label in (0, 1, 2):
            st = bs.get(label)
            row[f"ratio{label}"] = st.localization_ratio if st else float("nan")
        if sect["bwpt"]:
            res = bwpt_bound_energy(p, (0, 1), basis=basis)
            row["bwpt_E0"] = res.energy
            row["bwpt_converged"] = str(res.converged).lower()
            diff = abs(res.energy - row["E0"])
            row["bwpt_agrees"] = str(bool(diff <= sect["bwpt_tolerance"])).lower()
            if diff > sect["bwpt_tolerance"]:
                disagreements.append(float(g))
        rows.append(row)
    export_bound_state_rows(rows, stage.path("bound_states.csv"), "\n# ".join(stage.comments()))
    summary = {"rows": len(rows), "bwpt_disagreements": disagreements}
    stage.write_json("bound_states.meta.json", summary)
    return summary


def cmd_spectrum(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    params = cfg.model
    sect = cfg.section("spectrum")
    lim = cfg.section("limits")
    basis = enumerate_basis(params, lim["max_dim"])
    spec = diagonalize(build_sc_hamiltonian(params, basis), sect["sector"], lim["dense_limit"])
    rows = []
    for block in spec.blocks:
        ratios = block_localization_ratios(block, basis)
        for col, pos in enumerate(spec.positions(block.parity)):
            rows.append((int(pos), float(block.energies[col]), int(block.parity), float(ratios[col])))
    rows.sort()
    e_min = rows[0][1]
    stage.write_rows("spectrum.csv", ["index", "energy", "energy_rel", "parity", "ratio"],
                     [[str(i), e, e - e_min, str(p), r] for i, e, p, r in rows])
    summary = {"levels": len(rows), "basis": basis.tag, "lowest": e_min}
    if sect["quasi_bound"]:
        qb = subspace_quasi_bound_state(params, sect["min_excitation"], basis)
        export_profile(qb.profile, stage.path("quasi_bound_profile.csv"),
                       "\n# ".join(stage.comments()))
        summary["quasi_bound"] = {"energy": qb.energy, "energy_rel": qb.energy_rel,
                                  "ratio": qb.localization_ratio}
    stage.write_json("spectrum.meta.json", summary)
    return summary


def cmd_scatter(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    from .scattering import flows

    params = cfg.model
    sect = cfg.section("scatter")
    lim = cfg.section("limits")
    if params.eta <= 0:
        raise ConfigError("eta must be positive: the scatterer is decoupled from the leads")
    lo, hi = params.band
    omega = float(sect["omega_in"])
    if not lo < omega < hi:
        raise ConfigError(f"omega_in={omega} must lie strictly inside the band ({lo}, {hi})")
    basis = enumerate_basis(params, lim["max_dim"])
    snap = prepare_scatterer(params, basis, sect["ratio_threshold"], dense_limit=lim["dense_limit"])
    sol = snap.problem(params, sect["incident"]).solve(omega, sect["method"])
    fl = flows(sol)
    header = ["omega_in", "J_Te", "J_Re", "J_Tin", "J_Rin", "conservation_defect", "residual",
              "inelastic_open", "method"]
    stage.write_rows("scatter.csv", header,
                     [[omega, fl.J_Te, fl.J_Re, fl.J_Tin, fl.J_Rin, fl.conservation_defect,
                       sol.residual, str(sol.kinematics.inelastic_open).lower(), sol.method]])
    summary = {"omega_in": omega, "J_Te": fl.J_Te, "J_Re": fl.J_Re, "J_Tin": fl.J_Tin,
               "J_Rin": fl.J_Rin, "conservation_defect": fl.conservation_defect,
               "bound_energies": {str(k): v for k, v in snap.bound_energies.items()}}
    stage.write_json("scatter.meta.json", summary)
    return summary


def cmd_dark_lines(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    params = cfg.model
    dark = dict(dark_mode_energies(params))
    rows = []
    for k in range(1, params.n_cavities + 1):
        coupling = mode_coupling(params.replace(g=1.0), k)
        rows.append([str(k), mode_frequency(params, k), coupling, str(k in dark).lower()])
    stage.write_rows("dark_lines.csv", ["k", "mode_frequency", "coupling_per_g", "dark"], rows)
    summary = {"dark_modes": [[k, e] for k, e in dark.items()]}
    stage.write_json("dark_lines.meta.json", summary)
    return summary


def cmd_sweep(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    spec = cfg.sweep_spec()
    sect = cfg.section("sweep")
    result = sweep(spec, threads=threads)
    if sect["overlays"] or sect["quasi_bound"]:
        overlay_references(result, quasi_bound=sect["quasi_bound"])
    stem = cfg.data.get("name", "sweep")
    for kind in sect["outputs"]:
        write_sweep_csv(result, stage.path(f"{stem}_{kind}.csv"), kind, stage.comments())
    meta = sweep_metadata(result)
    units = cfg.section("units")
    if units:
        meta["physical_units"] = units
    stage.write_json(f"{stem}.meta.json", meta)
    return {"points": int(np.prod(result.shape)) * len(result.models),
            "flag_counts": meta["flag_counts"], "files": list(stage.names)}


def cmd_validate(cfg: RunConfig, stage: Staging, threads: int) -> dict:
    report = run_validation(cfg)
    lines = [f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}"
             for c in report["checks"]]
    with open(stage.path("validation.txt"), "w") as fh:
        fh.write(f"# config_hash: {cfg.hash}\n")
        fh.write("\n".join(lines) + "\n")
    stage.write_json("validation.json", report)
    print("\n".join(lines))
    return report


COMMANDS = {
    "bound-states": cmd_bound_states,
    "spectrum": cmd_spectrum,
    "scatter": cmd_scatter,
    "dark-lines": cmd_dark_lines,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crwscatter",
        description="Single-photon scattering off a supercavity with a two-level atom.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="YAML run configuration")
        src.add_argument("--preset", choices=preset_names(), help="built-in configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (default: available cores)")
        p.add_argument("--rwa", action="store_true",
                       help="drop the counter-rotating term (rotating-wave model only)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error_record(command: str, exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "command": command})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print(_error_record(args.command, ConfigError("--threads must be >= 1")), file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.preset, rwa=args.rwa)
    except CrwScatterError as exc:
        print(_error_record(args.command, exc), file=sys.stderr)
        return EXIT_CONFIG
    stage = Staging(args.out, cfg)
    try:
        summary = COMMANDS[args.command](cfg, stage, args.threads)
    except ConfigError as exc:
        stage.abort()
        print(_error_record(args.command, exc), file=sys.stderr)
        return EXIT_CONFIG
    except (CrwScatterError, ValueError, np.linalg.LinAlgError) as exc:
        stage.abort()
        print(_error_record(args.command, exc), file=sys.stderr)
        return EXIT_RUNTIME
    except BaseException:
        stage.abort()
        raise
    if args.command == "validate" and not summary["passed"]:
        # the report is still published: it is the useful output of a failed validation
        stage.commit()
        print(_error_record(args.command, CrwScatterError("validation failed")), file=sys.stderr)
        return EXIT_VALIDATION
    written = stage.commit()
    if args.command != "validate":
        print(json.dumps({"command": args.command, "config_hash": cfg.hash,
                          "files": [str(p) for p in written]}, default=_py))
    return 0
