import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrom import io
from pbrom.closure import build_residual_dataset, elm_train, elm_predict, narx_train, NarxConfig
from pbrom.fom import FomConfig, run_and_collect
from pbrom.galerkin import build_operators, build_viscosity_model
from pbrom.pod import pod_modes


@pytest.fixture(scope="module")
def ens():
    cfg = FomConfig(case="ns2d_obstacle",
                    grid={"nx": 16, "ny": 8, "dx": 0.25, "dy": 0.25,
                          "obstacles": [{"label": "body", "i": [4, 6], "j": [3, 5]}]},
                    nu_m=0.01, u_in=1.0, smagorinsky_cs=0.17, dt=0.02, dt_snapshot=0.1, t_end=1.0,
                    initial={"perturbation": 0.2}, seed=4)
    return run_and_collect(cfg)


@pytest.fixture(scope="module")
def pieces(ens):
    u = pod_modes(ens.velocity(), ens.grid).truncate(4)
    p = pod_modes(ens.data["p"], ens.grid, "p").truncate(4)
    visc = build_viscosity_model(ens.data["nu_t"], ens.times, ens.grid, ens.constants.nu_m, 3)
    ops = build_operators(u, p, visc, ens.bcs, meta={"case_hash": "x" * 64, "rank": 4})
    ds = build_residual_dataset(ens.velocity(), ens.times, u, ops, visc)
    return u, p, visc, ops, ds


def test_ensemble_round_trip(ens, tmp_path):
    h = io.save_ensemble(ens, tmp_path / "e")
    back = io.load_ensemble(tmp_path / "e")
    assert back.meta["case_hash"] == h == io.read_manifest(tmp_path / "e")["case_hash"]
    assert np.array_equal(back.times, ens.times)
    for k, v in ens.data.items():
        assert back.data[k].tobytes() == np.asarray(v, dtype=float).tobytes()
    assert back.grid.to_dict() == ens.grid.to_dict()
    # layout: little-endian float64, snapshot-major
    raw = np.fromfile(tmp_path / "e" / "p.bin", dtype="<f8")
    assert np.array_equal(raw.reshape(ens.times.size, -1), ens.data["p"])


def test_ensemble_hash_guard(ens, tmp_path):
    io.save_ensemble(ens, tmp_path / "e")
    m = json.loads((tmp_path / "e" / "manifest.json").read_text())
    m["constants"]["nu_m"] = 0.5
    (tmp_path / "e" / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(io.FormatError, match="hash"):
        io.load_ensemble(tmp_path / "e")
    with pytest.raises(io.FormatError):
        io.load_ensemble(tmp_path / "missing")


def test_truncated_binary_rejected(ens, tmp_path):
    io.save_ensemble(ens, tmp_path / "e")
    f = tmp_path / "e" / "u.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(io.FormatError):
        io.load_ensemble(tmp_path / "e")


def test_basis_round_trip(pieces, tmp_path):
    u = pieces[0]
    io.save_basis(u, tmp_path / "b", "abc")
    back, case = io.load_basis(tmp_path / "b")
    assert case == "abc" and back.rank == u.rank and back.variable == u.variable
    assert back.modes.tobytes() == u.modes.tobytes() and back.mean.tobytes() == u.mean.tobytes()
    assert np.array_equal(back.eigenvalues, u.eigenvalues)
    with pytest.raises(io.FormatError):
        io.load_basis(tmp_path / "nothing")


def test_operator_bundle_round_trip(pieces, tmp_path):
    _, _, visc, ops, _ = pieces
    io.save_operators(tmp_path / "ops.bin", ops, visc)
    o2, v2 = io.load_operators(tmp_path / "ops.bin")
    for k, arr in ops.arrays().items():
        assert o2.arrays()[k].tobytes() == np.asarray(arr, dtype=float).tobytes(), k
    assert o2.meta == ops.meta and o2.viscosity_variant == ops.viscosity_variant
    for t in (0.0, 0.35, 1.0):
        assert v2.a1(t) == visc.a1(t)
    assert np.array_equal(o2.solve_pressure(np.ones(4), 0.0), ops.solve_pressure(np.ones(4), 0.0))


def test_bundle_magic_and_kind(pieces, tmp_path):
    _, _, visc, ops, _ = pieces
    path = tmp_path / "ops.bin"
    io.save_operators(path, ops, visc)
    assert path.read_bytes().startswith(io.BUNDLE_MAGIC)
    with pytest.raises(io.FormatError):
        io.read_bundle(path, "elm")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    with pytest.raises(io.FormatError):
        io.read_bundle(bad)
    with pytest.raises(io.FormatError):
        io.load_closure(path)


def test_bundle_bytes_deterministic(pieces, tmp_path):
    _, _, visc, ops, _ = pieces
    io.save_operators(tmp_path / "a.bin", ops, visc)
    io.save_operators(tmp_path / "b.bin", ops, visc)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_elm_round_trip(pieces, tmp_path):
    ds = pieces[4]
    m = elm_train(ds, hidden_size=6, seed=3, regularization=1e-8)
    io.save_closure(tmp_path / "c.bin", m, {"rank": 4})
    back, meta = io.load_closure(tmp_path / "c.bin")
    assert meta == {"rank": 4} and back.kind == "elm"
    assert back.seed == 3 and back.regularization == 1e-8
    assert np.array_equal(elm_predict(back, ds.inputs), elm_predict(m, ds.inputs))
    assert back.report == m.report


def test_narx_round_trip(pieces, tmp_path):
    ds = pieces[4]
    m = narx_train(ds, NarxConfig(hidden_size=4, seed=2, epochs=20))
    io.save_closure(tmp_path / "n.bin", m, {})
    back, _ = io.load_closure(tmp_path / "n.bin")
    r, y = ds.inputs, ds.targets  # feature-major
    assert np.array_equal(back.predict(r[:, 1], r[:, 0], y[:, 0]), m.predict(r[:, 1], r[:, 0], y[:, 0]))
    assert back.sample_dt == m.sample_dt


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=True, width=64), min_size=1, max_size=12))
def test_csv_round_trip_full_precision(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    io.write_csv(path, ["a", "b"], [[v, -v] for v in values])
    header, data = io.read_csv(path)
    assert header == ["a", "b"]
    assert np.array_equal(data[:, 0], np.array(values)) and np.array_equal(data[:, 1], -np.array(values))


def test_trajectory_csv(tmp_path):
    from pbrom.rom import RomTrajectory
    rng = np.random.default_rng(0)
    tr = RomTrajectory(variant="B", times=np.arange(4) * 0.1, a_u=rng.standard_normal((4, 3)),
                       a_p=rng.standard_normal((4, 2)), closure=rng.standard_normal((4, 3)), step_cost=1e-6, dt=0.005, diverged=False,
                       failure_time=None, meta={})
    io.write_trajectory(tmp_path / "t.csv", tr)
    t, a, b = io.read_trajectory(tmp_path / "t.csv")
    assert np.array_equal(t, tr.times) and np.array_equal(a, tr.a_u) and np.array_equal(b, tr.a_p)


def test_svg_written(tmp_path):
    io.write_svg(tmp_path / "p.svg", [0, 1, 2], {"x": np.array([0.0, 1.0, np.nan]), "y": np.ones(3)}, "t")
    text = (tmp_path / "p.svg").read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 2
