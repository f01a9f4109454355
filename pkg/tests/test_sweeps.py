import json

import numpy as np
import pytest

from conftest import basis_for
from crwscatter.errors import ConfigError, ParameterError
from crwscatter.model import ModelParams
from crwscatter.scattering import flows
from crwscatter.sweeps import (BAND_MARGIN, Grid, SpectrumCache, SweepSpec, overlay_references,
                               parabola_vertex, prepare_scatterer, slice_minimum, sweep,
                               sweep_metadata, sweep_rows, transmission_minimum, write_metadata,
                               write_sweep_csv)

BASE = ModelParams(n_cavities=3, max_excitation=2, g=0.3, xi=0.23, eta=0.05)


def spec_(**kw):
    args = dict(base=BASE, axis="omega_in", grids={"omega_in": Grid(0.6, 1.4, 41)},
                ratio_threshold=1.1)
    args.update(kw)
    return SweepSpec(**args)


def test_grid_validation():
    assert np.allclose(Grid(0, 1, 3).values(), [0, 0.5, 1])
    assert Grid(0.5, 0.5, 1).values().tolist() == [0.5]
    assert Grid.from_values([0.3, 0.1]).values().tolist() == [0.3, 0.1]
    for bad in [(0, 1, 0), (0, 1, 1), (1, 0, 5)]:
        with pytest.raises(ConfigError):
            Grid(*bad)
    with pytest.raises(ConfigError):
        Grid.from_values([])


@pytest.mark.parametrize("kw", [
    {"axis": "temperature"},
    {"axis": "g"},  # no g grid
    {"secondary_axis": "omega_in"},
    {"grids": {"omega_in": Grid(1.5, 2.0, 5)}},
    {"grids": {"omega_in": Grid(0.6, 1.4, 5), "eta": Grid(0.0, 0.1, 3)}, "secondary_axis": "eta"},
    {"grids": {"omega_in": Grid(0.6, 1.4, 5), "eta": Grid(0.1, 0.3, 3)}, "secondary_axis": "eta"},
    {"base": BASE.replace(eta=0.0)},
    {"method": "fast"},
])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        spec_(**kw)


def test_omega_range_clipped_to_band_keeps_uniform_spacing():
    s = spec_(grids={"omega_in": Grid(0.0, 2.0, 11)})
    v = s.axis_values("omega_in")
    lo, hi = BASE.band
    assert v[0] == pytest.approx(lo + BAND_MARGIN) and v[-1] == pytest.approx(hi - BAND_MARGIN)
    assert np.allclose(np.diff(v), np.diff(v)[0])


def test_single_point_sweep_equals_direct_solve():
    s = spec_(grids={"omega_in": Grid(1.1, 1.1, 1)})
    res = sweep(s)
    snap = prepare_scatterer(BASE, basis_for(3, 2), 1.1)
    fl = flows(snap.problem(BASE).solve(1.1))
    assert res.shape == (1, 1)
    assert res.data["full"]["J_Te"][0, 0] == fl.J_Te
    assert res.data["full"]["J_Tin"][0, 0] == fl.J_Tin
    assert res.flows_at("full", 0).J_Re == fl.J_Re


def test_two_axis_sweep_and_cache_reuse():
    s = spec_(axis="g", secondary_axis="omega_in",
              grids={"g": Grid(0.0, 0.6, 4), "omega_in": Grid(0.6, 1.4, 21)}, rwa_compare=True)
    cache = SpectrumCache()
    res = sweep(s, cache=cache)
    assert res.shape == (4, 21) and res.models == ("rwa", "full")
    assert cache.misses == 8
    assert np.all(res.flags["full"] != "pole_skip")
    assert np.nanmax(res.data["full"]["conservation_defect"]) < 1e-8
    again = sweep(s, cache=cache)
    assert cache.misses == 8 and again.metadata["spectra_computed"] == 0
    for m in res.models:
        for f in ("J_Te", "J_Tin"):
            assert np.array_equal(res.data[m][f], again.data[m][f])


def test_eta_axis_reuses_one_spectrum():
    s = spec_(axis="eta", secondary_axis="omega_in",
              grids={"eta": Grid(0.01, 0.2, 5), "omega_in": Grid(0.6, 1.4, 11)})
    res = sweep(s)
    assert res.metadata["spectra_computed"] == 1
    assert not np.array_equal(res.data["full"]["J_Te"][0], res.data["full"]["J_Te"][-1])


def test_csv_bytes_independent_of_threads_and_cache(tmp_path):
    s = spec_(axis="g", secondary_axis="omega_in",
              grids={"g": Grid(0.1, 0.5, 3), "omega_in": Grid(0.6, 1.4, 31)})
    cache = SpectrumCache()
    sweep(s, cache=cache)
    outs = []
    for n, (threads, c) in enumerate([(1, None), (2, None), (2, cache)]):
        res = overlay_references(sweep(s, threads=threads, cache=c))
        path = tmp_path / f"r{n}.csv"
        write_sweep_csv(res, path, "long", ["config_hash=x"])
        write_metadata(sweep_metadata(res), tmp_path / f"r{n}.json")
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    meta = [json.loads((tmp_path / f"r{n}.json").read_text()) for n in range(3)]
    assert meta[0]["slices"] == meta[1]["slices"]


def test_output_kinds_headers():
    s = spec_(grids={"omega_in": Grid(0.6, 1.4, 5)}, rwa_compare=True)
    res = sweep(s)
    header, rows = sweep_rows(res, "paired")
    assert header[:3] == ["omega_in", "J_Te_rwa", "J_Re_rwa"]
    assert "J_Te_full" in header and len(rows) == 5
    header, rows = sweep_rows(res, "long")
    assert "model" in header and len(rows) == 10
    header, _ = sweep_rows(overlay_references(res), "total")
    assert header[:3] == ["omega_in", "J_T", "J_Te"] and "dark_k2" in header
    with pytest.raises(ConfigError):
        sweep_rows(res, "wide")


def test_parabola_vertex_exact():
    x = np.array([0.1, 0.25, 0.3])
    y = 3 * (x - 0.21) ** 2 + 1
    assert parabola_vertex(x, y) == pytest.approx(0.21, abs=1e-14)


def test_slice_minimum_markers():
    w = np.linspace(0, 1, 11)
    assert slice_minimum(w, (w - 0.52) ** 2) == pytest.approx(0.52)
    assert np.isnan(slice_minimum(w, w))  # minimum on the edge
    assert np.isnan(slice_minimum(w, np.ones(11)))  # flat


def test_transmission_minimum_requires_omega_axis():
    s = spec_(axis="g", grids={"g": Grid(0.1, 0.3, 3), "omega_in": Grid(1.0, 1.0, 1)})
    res = sweep(s)
    with pytest.raises(ParameterError):
        transmission_minimum(res)


def test_dark_overlay_constant_across_g():
    s = spec_(axis="g", secondary_axis="omega_in",
              grids={"g": Grid(0.0, 0.8, 3), "omega_in": Grid(0.6, 1.4, 11)})
    res = overlay_references(sweep(s))
    dark = dict(res.references["dark_modes"])
    assert list(dark) == [2]  # the center site of a 3-chain is a node of mode 2 only
    header, rows = sweep_rows(res, "total")
    col = header.index("dark_k2")
    assert {r[col] for r in rows} == {1.0}
    thr = res.references["full"]["threshold"]
    assert thr.shape == (3,)
