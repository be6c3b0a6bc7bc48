import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrom import grid as gf
from pbrom.fom import (FlowBCs, FomConfig, FomState, NavierStokes2D, SnapshotEnsemble, StabilityError,
                       initial_state, run_and_collect, smagorinsky_nu_t, step_burgers, step_ns2d)
from pbrom.grid import ScalarBC, StructuredGrid


def burgers_config(**kw):
    d = dict(case="burgers1d", grid={"nx": 32, "dx": 2 * np.pi / 32, "periodic_x": True},
             nu_m=0.05, dt=0.01, dt_snapshot=0.05, t_end=0.5)
    d.update(kw)
    return FomConfig(**d)


def periodic_config(n=32, **kw):
    h = 2 * np.pi / n
    d = dict(case="ns2d_periodic", grid={"nx": n, "ny": n, "dx": h, "dy": h, "periodic_x": True,
                                         "periodic_y": True},
             nu_m=0.01, dt=0.02, dt_snapshot=0.1, t_end=0.2, smagorinsky_cs=0.0)
    d.update(kw)
    return FomConfig(**d)


# ---------------------------------------------------------------- config
def test_config_timing_invariants():
    with pytest.raises(ValueError):
        burgers_config(dt=0.0)
    with pytest.raises(ValueError):
        burgers_config(dt_snapshot=0.015)
    with pytest.raises(ValueError):
        burgers_config(t_end=0.0)
    with pytest.raises(ValueError):
        burgers_config(case="ns3d")


def test_config_roundtrip():
    cfg = burgers_config(initial={"modes": [[1, 1.0, 0.0]]})
    assert FomConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        FomConfig.from_dict({**cfg.to_dict(), "colour": "blue"})


def test_snapshot_count_paper_example():
    assert burgers_config(dt=0.05, dt_snapshot=0.1, t_end=30.0).n_snapshots == 301


def test_snapshot_count_single_interval():
    ens = run_and_collect(burgers_config(t_end=0.05))
    assert ens.n_snapshots == 2


def test_ensemble_uniform_spacing_enforced():
    g = StructuredGrid(4, 1, 1.0, 1.0, True)
    with pytest.raises(ValueError):
        SnapshotEnsemble(g, [0.0, 0.1, 0.3], {"u": np.zeros((3, 4))}, gf.FluidConstants(), FlowBCs.periodic(1))


# ---------------------------------------------------------------- Burgers
def test_burgers_rest_state():
    cfg = burgers_config()
    g = cfg.make_grid()
    s = FomState(0.0, np.zeros((1, g.n_fluid)))
    assert np.all(step_burgers(g, s, 0.01, 0.1).velocity == 0)


def test_burgers_linear_decay():
    n, nu, T, dt = 128, 0.1, 1.0, 0.01
    g = StructuredGrid(n, 1, 2 * np.pi / n, 1.0, True)
    eps = 1e-6
    mode = np.sin(g.centres[0])
    s = FomState(0.0, eps * mode[None])
    for _ in range(int(round(T / dt))):
        s = step_burgers(g, s, dt, nu)
    # amplitude by projection onto the initial mode
    ratio = (s.velocity[0] @ mode) / (eps * mode @ mode)
    assert abs(ratio / np.exp(-nu * T) - 1) <= 1e-4


def test_burgers_mass_conservation():
    cfg = burgers_config(initial={"modes": [[0, 0.7, np.pi / 2], [1, 1.0, 0.0], [3, 0.3, 1.0]]})
    g = cfg.make_grid()
    s = initial_state(cfg)
    m0 = np.sum(s.velocity * g.cell_volumes)
    for _ in range(1000):
        s = step_burgers(g, s, 0.01, 0.05)
    assert abs(np.sum(s.velocity * g.cell_volumes) - m0) <= 1e-10 * abs(m0)


def test_burgers_cfl_guard():
    g = StructuredGrid(16, 1, 0.1, 1.0, True)
    s = FomState(0.0, np.full((1, 16), 5.0))
    with pytest.raises(StabilityError):
        step_burgers(g, s, 0.05, 0.1)


def test_burgers_needs_periodic_1d():
    g = StructuredGrid(8, 1, 1.0, 1.0, False)
    with pytest.raises(ValueError):
        step_burgers(g, FomState(0.0, np.zeros((1, 8))), 0.1, 0.1)


# ---------------------------------------------------------------- Smagorinsky
def test_smagorinsky_uniform_zero():
    g = StructuredGrid(8, 8, 0.5, 0.5, True, True)
    vel = np.stack([np.full(g.n_fluid, 1.3), np.full(g.n_fluid, -0.4)])
    per = ScalarBC.periodic()
    assert np.all(smagorinsky_nu_t(g, vel, (per, per)) == 0)


def test_smagorinsky_pure_shear():
    g = StructuredGrid(10, 10, 0.1, 0.2)
    gamma, cs = 3.0, 0.17
    vel = np.stack([gamma * g.centres[1], np.zeros(g.n_fluid)])
    zg = ScalarBC()
    nu = g.to_array(smagorinsky_nu_t(g, vel, (zg, zg), cs))
    expected = (cs * math.sqrt(g.dx * g.dy)) ** 2 * gamma
    assert np.allclose(nu[1:-1, 1:-1], expected, rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10.0))
def test_smagorinsky_nonnegative_and_homogeneous(seed, scale):
    g = StructuredGrid(8, 6, 0.3, 0.3, True, True)
    per = ScalarBC.periodic()
    vel = np.random.default_rng(seed).standard_normal((2, g.n_fluid))
    nu = smagorinsky_nu_t(g, vel, (per, per))
    assert np.all(nu >= 0)
    assert np.allclose(smagorinsky_nu_t(g, scale * vel, (per, per)), scale * nu, rtol=1e-12)
    assert np.allclose(smagorinsky_nu_t(g, 2 * vel, (per, per)), 2 * nu, rtol=1e-12)


# ---------------------------------------------------------------- Navier-Stokes
def test_uniform_inflow_unchanged():
    cfg = FomConfig(case="ns2d_obstacle", grid={"nx": 16, "ny": 8, "dx": 0.25, "dy": 0.25},
                    nu_m=0.01, u_in=1.0, dt=0.02, dt_snapshot=0.02, t_end=0.02)
    solver = NavierStokes2D(cfg)
    n = solver.grid.n_fluid
    s = FomState(0.0, np.stack([np.ones(n), np.zeros(n)]))
    for _ in range(10):
        s = solver.step(s, cfg.dt)
    assert np.allclose(s.velocity[0], 1.0, atol=1e-10)
    assert np.allclose(s.velocity[1], 0.0, atol=1e-10)


def test_taylor_green_energy_decay():
    n, nu = 64, 0.01
    cfg = periodic_config(n, nu_m=nu, initial={"kind": "taylor_green"})
    solver = NavierStokes2D(cfg)
    s = initial_state(cfg, solver)
    e0 = np.sum(s.velocity ** 2)
    t_end = 2 * np.pi  # one eddy turnover for unit amplitude and wavenumber
    nsteps = int(round(t_end / 0.02))
    for _ in range(nsteps):
        s = solver.step(s, 0.02)
    ratio = np.sum(s.velocity ** 2) / e0
    assert abs(ratio / np.exp(-4 * nu * s.time) - 1) <= 0.02


def test_projection_divergence_after_step():
    cfg = periodic_config(32, initial={"kind": "random", "amplitude": 1.0, "k_max": 4}, seed=7)
    solver = NavierStokes2D(cfg)
    s = initial_state(cfg, solver)
    assert np.abs(solver.divergence(s.velocity)).max() <= 1e-8
    s = step_ns2d(s, cfg.dt, solver)
    assert np.abs(solver.divergence(s.velocity)).max() <= 1e-8


def test_periodic_energy_non_increasing():
    cfg = periodic_config(24, initial={"kind": "random"}, smagorinsky_cs=0.17, seed=2)
    solver = NavierStokes2D(cfg)
    s = initial_state(cfg, solver)
    e = [np.sum(s.velocity ** 2)]
    for _ in range(20):
        s = solver.step(s, cfg.dt)
        e.append(np.sum(s.velocity ** 2))
    assert np.all(np.diff(e) <= 1e-8 * e[0])


def test_obstacle_step_divergence_and_cfl():
    cfg = FomConfig(case="ns2d_obstacle", grid={"nx": 24, "ny": 12, "dx": 0.25, "dy": 0.25,
                                               "obstacles": [{"label": "body", "i": [6, 9], "j": [4, 8]}]},
                    nu_m=0.01, u_in=1.0, dt=0.02, dt_snapshot=0.02, t_end=0.02)
    solver = NavierStokes2D(cfg)
    s = initial_state(cfg, solver)
    for _ in range(5):
        s = solver.step(s, cfg.dt)
    assert np.abs(solver.divergence(s.velocity)).max() <= 1e-8
    with pytest.raises(StabilityError):
        solver.step(s, 1.0)


# ---------------------------------------------------------------- collection
def test_run_and_collect_deterministic():
    cfg = burgers_config(initial={"modes": [[1, 1.0, 0.0]], "noise": 0.05}, seed=11)
    a, b = run_and_collect(cfg), run_and_collect(cfg)
    assert np.array_equal(a.times, b.times)
    for k in a.data:
        assert a.data[k].tobytes() == b.data[k].tobytes()
    c = run_and_collect(burgers_config(initial={"modes": [[1, 1.0, 0.0]], "noise": 0.05}, seed=12))
    assert not np.array_equal(a.data["u"], c.data["u"])


def test_run_and_collect_ns_variables():
    cfg = periodic_config(16, t_end=0.2, initial={"kind": "random"}, smagorinsky_cs=0.17)
    ens = run_and_collect(cfg)
    assert set(ens.data) == {"u", "v", "p", "nu_t"}
    assert ens.n_snapshots == 3
    assert np.allclose(np.diff(ens.times), 0.1)
    assert ens.velocity().shape == (3, 2, 16 * 16)


def test_run_and_collect_reports_failure_time():
    cfg = burgers_config(initial={"modes": [[1, 40.0, 0.0]]})
    with pytest.raises(StabilityError, match="t="):
        run_and_collect(cfg)
