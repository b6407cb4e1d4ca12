"""Acceptance suite: end-to-end checks of the headline behaviors at
fixed tolerances.  These run the bundled scenarios (minutes of compute);
the per-module unit tests cover the same components in isolation."""

import time
from importlib import resources

import numpy as np
import pytest
from conftest import open_box, uniform_nu
from test_confinement import _particle_cloud_reach
from test_eikonal import dijkstra_oracle
from test_kernels import double_sum_oracle

from crowdflow.cli import main
from crowdflow.config import build_scenario, parse_config
from crowdflow.confinement import (AgentTrack, PsiProfile,
                                   confinement_condition, dispersal_condition,
                                   reach_evolve, rearrange)
from crowdflow.dynamics import ModelSpec, SpeedLaw
from crowdflow.eikonal import solve_eikonal
from crowdflow.functionals import evacuation_time, gateaux_check
from crowdflow.grid import Rect, gaussian_datum, make_grid, rasterize_geometry
from crowdflow.kernels import build_kernel, convolve
from crowdflow.solver import Scenario, SchemeParams, run_scenario


def _bundled(name):
    return (resources.files("crowdflow") / "scenarios" / name).read_text()


# -- criterion 1: discrete mass conservation ---------------------------------

def test_mass_conserved_closed_room_200x200():
    geom = open_box(0.0, 10.0, 0.0, 10.0, 0.05)     # 200 x 200 cells
    grid = geom.grid
    kern = build_kernel("poly3", 0.6, True, grid)
    law = SpeedLaw("linear", vmax=6.0, jam=1.0)
    spec = ModelSpec(model="R", law=law, kernel=kern, epsilon=0.2)
    X, Y = grid.centers()
    rho0 = np.where((X > 2) & (X < 8) & (Y > 2) & (Y < 8), 0.75, 0.0)
    params = SchemeParams(cfl=0.45, dt_max=0.003, fixed_dt=0.003, t_end=3.0)
    t0 = time.perf_counter()
    run = run_scenario(Scenario(geometry=geom, nu=uniform_nu(geom), model=spec,
                                densities=[rho0], agents=None, params=params))
    wall = time.perf_counter() - t0
    assert len(run.series["t"]) - 1 == 1000
    mass = run.series["mass"].sum(axis=1)
    assert np.abs(mass - run.initial_mass).max() <= 1e-10 * run.initial_mass
    assert wall < 30.0, f"1000 steps took {wall:.1f}s"


# -- criteria 2 + 3: Braess runs (shared fixture) ----------------------------

@pytest.fixture(scope="module")
def braess_runs():
    """Open-room vs columns runs of the bundled door scenario at two
    resolutions; values: (run, wall_seconds)."""
    out = {}
    for dx in (0.05, 0.025):
        cfg = parse_config(_bundled("braess.toml"))
        assert cfg.epsilon == 0.2 and cfg.braess_theta == 0.999
        cfg.dx = dx
        for label, extra in (("open", ()), ("columns", tuple(cfg.braess_columns))):
            scn = build_scenario(cfg, extra_obstacles=extra)
            t0 = time.perf_counter()
            run = run_scenario(scn)
            out[(dx, label)] = (run, time.perf_counter() - t0)
    return out


def test_positivity_and_maximum_principle(braess_runs):
    jam = 1.0
    for (dx, label), (run, _) in braess_runs.items():
        for snap in run.snapshots:
            assert snap[0].min() >= 0.0, (dx, label)
        assert run.series["linf"].max() <= jam + 1e-3, (dx, label)


def test_braess_columns_strictly_faster(braess_runs):
    for dx in (0.05, 0.025):
        run_open, wall_open = braess_runs[(dx, "open")]
        run_cols, wall_cols = braess_runs[(dx, "columns")]
        t_open = evacuation_time(run_open, 0.999)
        t_cols = evacuation_time(run_cols, 0.999)
        assert t_open is not None and t_cols is not None, dx
        assert t_cols < t_open, (dx, t_open, t_cols)
        assert max(wall_open, wall_cols) < 300.0, dx


# -- criterion 4: transport accuracy under grid halving ----------------------

def test_transport_l1_order():
    law = SpeedLaw("tabulated", table_rho=np.array([0.0, 1.0]),
                   table_v=np.array([1.0, 1.0]))    # unit constant speed

    def l1_error(dx):
        geom = open_box(0.0, 4.0, 0.0, 2.0, dx)
        grid = geom.grid
        kern = build_kernel("poly3", 0.4, True, grid)
        spec = ModelSpec(model="S", law=law, kernel=kern)
        rho0 = gaussian_datum(grid, 1.0, 1.0, 0.25, 0.5)
        params = SchemeParams(cfl=0.45, dt_max=0.45 * dx, t_end=1.0)
        run = run_scenario(Scenario(geometry=geom, nu=uniform_nu(geom),
                                    model=spec, densities=[rho0], agents=None,
                                    params=params))
        exact = gaussian_datum(grid, 2.0, 1.0, 0.25, 0.5)
        return float(np.abs(run.snapshots[-1][0] - exact).sum()) * grid.cell_area

    e_coarse, e_fine = l1_error(0.1), l1_error(0.05)
    order = np.log2(e_coarse / e_fine)
    assert order >= 0.7, (e_coarse, e_fine, order)


# -- criterion 5: directional-derivative consistency -------------------------

def _gateaux_from_config(cfg):
    scn = build_scenario(cfg)
    gt = cfg.gateaux
    spec = scn.model
    r_o = gaussian_datum(scn.geometry.grid, gt["center"][0], gt["center"][1],
                         gt["sigma"], gt["amplitude"])
    r_o = np.where(scn.geometry.free, r_o, 0.0)
    from dataclasses import replace
    params = replace(scn.params, fixed_dt=gt["fixed_dt"])
    return gateaux_check(scn.densities[0], r_o, gt["h"], spec, scn.nu,
                         scn.geometry, params, gt["t_end"]), gt["h"]


def test_gateaux_errors_first_order():
    cfg = parse_config(_bundled("gateaux.toml"))
    assert cfg.gateaux["h"] == [0.1, 0.05, 0.025, 0.0125]
    t0 = time.perf_counter()
    errors, h = _gateaux_from_config(cfg)
    wall = time.perf_counter() - t0
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errors, errors[1:])), errors
    slope = float(np.polyfit(np.log(h), np.log(errors), 1)[0])
    assert slope >= 0.9, (errors, slope)
    assert wall < 120.0, f"sensitivity sweep took {wall:.1f}s"


def test_gateaux_exact_when_speed_density_independent():
    cfg = parse_config(_bundled("gateaux.toml"))
    cfg.law = SpeedLaw("tabulated", table_rho=np.array([0.0, 1.0]),
                       table_v=np.array([1.5, 1.5]))
    errors, _ = _gateaux_from_config(cfg)
    assert max(errors) <= 1e-10, errors


# -- criterion 6: confinement (analytic condition + evolved orbit run) -------

def test_confinement_condition_analytic_margin():
    cfg = parse_config(_bundled("confine_orbit.toml"))
    spec = cfg.confinement
    rep = confinement_condition(spec.psi, spec.c, spec.track.radius,
                                spec.rstar[0], spec.rstar[1])
    assert rep.holds
    # psi == -1: ring average of the radial drift is -R*, worst at
    # R* = r_minus = 0.6, so the margin is r_minus - c = 0.1 exactly
    assert rep.margin == pytest.approx(0.1, abs=1e-6)


def test_confinement_orbit_reach_stays_bounded():
    cfg = parse_config(_bundled("confine_orbit.toml"))
    spec = cfg.confinement
    assert spec.dx == 0.05 and spec.t_end == 20.0
    grid = make_grid(spec.domain, spec.dx)
    X, Y = grid.centers()
    k0 = spec.k0.contains(X, Y)
    snaps = reach_evolve(k0, [spec.track], spec.psi, spec.c, spec.t_end, grid,
                         snapshot_dt=spec.snapshot_dt)
    rad = np.hypot(X, Y)
    bound = 2.0 + 2.0 * spec.dx
    for s in snaps:
        assert rad[s.mask].max() <= bound, (s.t, rad[s.mask].max())
    assert snaps[-1].t == pytest.approx(spec.t_end)


# -- criterion 7: dispersal --------------------------------------------------

def test_dispersal_free_growth_matches_ball():
    cfg = parse_config(_bundled("disperse.toml"))
    spec = cfg.confinement
    grid = make_grid(spec.domain, spec.dx)
    X, Y = grid.centers()
    k0 = spec.k0.contains(X, Y)
    snaps = reach_evolve(k0, [], spec.psi, spec.c, spec.t_end, grid,
                         snapshot_dt=spec.snapshot_dt)
    for s in snaps[1:]:
        exact = np.pi * (1.0 + s.t) ** 2
        assert s.area == pytest.approx(exact, rel=0.05), s.t
    area0 = float(np.count_nonzero(k0)) * grid.cell_area
    rep = dispersal_condition(spec.psi, spec.c, area0, spec.sigma_max)
    assert rep.holds


def test_dispersal_condition_exponential_profile():
    psi = PsiProfile("scaled-exponential", value=1.0)
    rep = dispersal_condition(psi, c=0.5, area0=np.pi, sigma_max=120.0)
    assert rep.holds


# -- criterion 8: oracle equivalences ----------------------------------------

def test_oracle_convolution_exact(rng):
    grid = make_grid(Rect(0.0, 3.0, 0.0, 2.0), 0.1)
    k = build_kernel("poly3", 0.5, True, grid)
    rho = rng.uniform(0.0, 1.0, grid.shape)
    assert np.array_equal(convolve(rho, k, grid, method="direct"),
                          double_sum_oracle(rho, k, grid))


def test_oracle_eikonal_vs_dijkstra():
    dx = 0.05
    geom = rasterize_geometry(Rect(0.0, 3.0, 0.0, 2.0),
                              [Rect(1.0, 1.2, 0.5, 2.0),
                               Rect(2.0, 2.2, 0.0, 1.5)],
                              [Rect(2.95, 3.0, 0.8, 1.2)], dx)
    d = solve_eikonal(geom)
    oracle = dijkstra_oracle(geom)
    free = geom.free & np.isfinite(d)
    assert np.all(np.abs(oracle[free] - d[free]) <= 2 * dx + 0.05 * oracle[free])


def test_oracle_reach_vs_particle_cloud():
    from scipy import ndimage
    grid = make_grid(Rect(-1.5, 1.5, -1.5, 1.5), 0.05)
    X, Y = grid.centers()
    k0 = X ** 2 + Y ** 2 <= 0.8 ** 2
    psi = PsiProfile("constant", value=-1.0)
    static = AgentTrack(kind="waypoints",
                        waypoints=np.array([[0.0, 0.0], [0.0, 0.0]]),
                        times=np.array([0.0, 1.0]))
    snaps = reach_evolve(k0, [static], psi, c=0.3, t_end=1.0, grid=grid)
    mask = snaps[-1].mask
    seeds = np.stack([X[k0], Y[k0]], axis=-1)
    cloud = _particle_cloud_reach(seeds, static, psi, 0.3, 1.0)
    ci, cj = grid.cell_index(cloud[:, 0], cloud[:, 1])
    cmask = np.zeros(grid.shape, dtype=bool)
    cmask[ci, cj] = True
    h = max(grid.dx, grid.dy)
    d_to_cloud = ndimage.distance_transform_edt(~cmask, sampling=(grid.dx, grid.dy))
    d_to_mask = ndimage.distance_transform_edt(~mask, sampling=(grid.dx, grid.dy))
    assert d_to_cloud[mask].max() <= h + 1e-12
    assert d_to_mask[cmask].max() <= h + 1e-12


def test_oracle_rearrangement_is_sort(rng):
    x = rng.normal(size=513)
    assert np.array_equal(rearrange(x), np.sort(x))


# -- criterion 9: bit-for-bit determinism of the CLI -------------------------

@pytest.mark.parametrize("scenario,extra", [("smoke.toml", []),
                                            ("piper.toml", ["--end-time", "1.0"])])
def test_cli_outputs_byte_identical(tmp_path, scenario, extra):
    p = tmp_path / scenario
    p.write_text(_bundled(scenario))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", str(p), "--out", str(a)] + extra) == 0
    assert main(["simulate", str(p), "--out", str(b)] + extra) == 0
    names = sorted(f.name for f in a.iterdir())
    assert names == sorted(f.name for f in b.iterdir())
    assert names, "no outputs written"
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
