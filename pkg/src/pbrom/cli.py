"""Command-line pipeline: fom-run, pod, build, train-closure, rom-run, eval, bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import benchmark_speedup
from .closure import NarxConfig, build_residual_dataset, elm_train, narx_train
from .fom import run_and_collect
from .galerkin import build_operators, build_viscosity_model
from .metrics import FORCE_HEADER, field_deviation, force_series, rmse_per_mode
from .pod import ModalTrajectory, choose_rank, pod_modes, project_coefficients, reconstruct
from .presets import load_config
from .rom import VARIANTS, assemble_model, initial_coefficients, integrate

log = logging.getLogger("pbrom")


def _load_bases(basis_dir, rank=None, p_rank=None):
    basis_dir = Path(basis_dir)
    u, case = io.load_basis(basis_dir / "velocity")
    if rank is not None:
        u = u.truncate(choose_rank(u, rank=rank))
    p = None
    if (basis_dir / "p").is_dir():
        p, _ = io.load_basis(basis_dir / "p")
        p = p.truncate(choose_rank(p, rank=u.rank if p_rank is None else p_rank))
    return u, p, case


def _check_case(ens, case, what):
    if case is not None and ens.meta.get("case_hash") != case:
        raise ValueError(f"{what} was built from a different ensemble (case hash mismatch)")


# ---------------------------------------------------------------- commands
def cmd_fom_run(args):
    cfg = load_config(args.config, args.seed)
    ens = run_and_collect(cfg, progress=args.verbose)
    h = io.save_ensemble(ens, args.out)
    print(f"wrote {ens.n_snapshots} snapshots to {args.out} (case {h[:12]})")


def cmd_pod(args):
    ens = io.load_ensemble(args.ensemble)
    out = Path(args.out)
    case = ens.meta["case_hash"]
    u = pod_modes(ens.velocity(), ens.grid, "velocity", max_rank=args.rank)
    io.save_basis(u, out / "velocity", case)
    msg = [f"velocity rank {u.rank}"]
    if "p" in ens.data:
        p = pod_modes(ens.data["p"], ens.grid, "p", max_rank=args.rank)
        io.save_basis(p, out / "p", case)
        msg.append(f"pressure rank {p.rank}")
    print(", ".join(msg))


def _select_rank(u_basis, args):
    if args.rank is not None:
        return choose_rank(u_basis, rank=args.rank)
    return choose_rank(u_basis, energy=args.energy)


def cmd_build(args):
    ens = io.load_ensemble(args.ensemble)
    u, p, case = _load_bases(args.basis)
    _check_case(ens, case, "basis")
    r = _select_rank(u, args)
    u, p, _ = _load_bases(args.basis, r, args.p_rank)
    visc_variant = VARIANTS[args.variant][0]
    visc = build_viscosity_model(ens.data["nu_t"], ens.times, ens.grid, ens.constants.nu_m, visc_variant)
    meta = {"case_hash": case, "rank": u.rank, "pressure_rank": 0 if p is None else p.rank,
            "dt_snapshot": ens.dt_snapshot, "scheme": "skew", "variant": args.variant}
    ops = build_operators(u, p, visc, ens.bcs, "skew", meta)
    io.save_operators(args.out, ops, visc)
    print(f"operators rank {ops.rank}/{ops.pressure_rank}, viscosity model {visc.name} -> {args.out}")


def _dataset(ens, bundle, basis_dir):
    ops, visc = io.load_operators(bundle)
    u, p, case = _load_bases(basis_dir, ops.rank, ops.pressure_rank)
    _check_case(ens, ops.meta.get("case_hash"), "operator bundle")
    return ops, visc, u, build_residual_dataset(ens.velocity(), ens.times, u, ops, visc)


def cmd_train_closure(args):
    ens = io.load_ensemble(args.ensemble)
    ops, visc, u, ds = _dataset(ens, args.bundle, args.basis)
    seed = 0 if args.seed is None else args.seed
    if args.kind == "elm":
        model = elm_train(ds, hidden_size=args.hidden, seed=seed, regularization=args.regularization)
    else:
        model = narx_train(ds, NarxConfig(hidden_size=args.hidden, seed=seed))
    meta = {"case_hash": ops.meta.get("case_hash"), "rank": ops.rank,
            "viscosity_variant": visc.variant}
    io.save_closure(args.out, model, meta)
    rep = model.report
    print(f"{args.kind}: train rmse {rep['train_rmse']:.4g} vs zero predictor {rep['zero_rmse']:.4g} -> {args.out}")


def cmd_rom_run(args):
    ops, visc = io.load_operators(args.bundle)
    variant = args.variant or ops.meta.get("variant")
    closure, cmeta = (None, None)
    if args.closure:
        closure, cmeta = io.load_closure(args.closure)
    model = assemble_model(variant, ops, visc, closure, cmeta)
    ens = io.load_ensemble(args.ensemble)
    _check_case(ens, ops.meta.get("case_hash"), "operator bundle")
    u, _, _ = _load_bases(args.basis, ops.rank, ops.pressure_rank)
    t0 = ens.times[0] if args.t0 is None else args.t0
    t1 = ens.times[-1] if args.t_end is None else args.t_end
    a0 = initial_coefficients(ens, u, t0)
    traj = integrate(model, a0, (t0, t1), dt=args.dt, output_dt=ens.dt_snapshot)
    io.write_trajectory(args.out, traj)
    status = f"diverged at t={traj.failure_time:.6g}" if traj.diverged else "completed"
    print(f"variant {variant}: {status}, {traj.times.size} outputs, {traj.step_cost * 1e6:.1f} us/step -> {args.out}")
    if traj.diverged:
        log.warning("trajectory diverged; partial output written")


def cmd_eval(args):
    ens = io.load_ensemble(args.ensemble)
    times, a, b = io.read_trajectory(args.trajectory)
    u, p, case = _load_bases(args.basis, a.shape[1], b.shape[1] if b.size else None)
    _check_case(ens, case, "basis")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vel = ens.velocity()
    exact = ModalTrajectory("velocity", ens.times, project_coefficients(vel, u))
    report = rmse_per_mode(ModalTrajectory("velocity", times, a), exact, args.variant or "")
    cols = {"u": report.rmse["velocity"]}
    if p is not None and b.shape[1]:
        ep = ModalTrajectory("p", ens.times, project_coefficients(ens.data["p"], p))
        cols["p"] = rmse_per_mode(ModalTrajectory("p", times, b), ep).rmse["p"]
    r = max(len(v) for v in cols.values())
    rows = [[i + 1] + [v[i] if i < len(v) else float("nan") for v in cols.values()] for i in range(r)]
    io.write_csv(out / "rmse.csv", ["mode"] + [f"rmse_{k}" for k in cols], rows)

    from .metrics import align
    pick = align(times, ens.times)
    rec = reconstruct(u, a)
    cfg = ens.meta.get("config", {})
    scale = float(cfg.get("u_in") or 0.0) or float(np.sqrt(np.mean(vel ** 2)))
    dev_rows = []
    for j, k in enumerate(pick):
        d = field_deviation(rec[j], vel[k], scale, ens.grid)
        dev_rows.append([times[j], d.stats["max"], d.stats["mean"], d.stats["rms"]])
    io.write_csv(out / "deviation.csv", ["time", "max", "mean", "rms"], dev_rows)

    if ens.grid.obstacles and p is not None and b.shape[1]:
        rho, nu_m = ens.constants.rho, ens.constants.nu_m
        label = ens.grid.obstacles[0].label
        fom = force_series(ens.times[pick], ens.data["p"][pick], vel[pick], nu_m + ens.data["nu_t"][pick],
                           ens.grid, label, rho)
        nu_rom = nu_m + ens.data["nu_t"].mean(axis=0)
        if args.bundle:
            _, visc = io.load_operators(args.bundle)
            nu_rom = np.stack([np.broadcast_to(visc.evaluate(t), (ens.grid.n_fluid,)) for t in times])
        rom = force_series(times, reconstruct(p, b), rec, nu_rom, ens.grid, label, rho)
        io.write_csv(out / "forces_rom.csv", FORCE_HEADER, rom.rows())
        io.write_csv(out / "forces_fom.csv", FORCE_HEADER, fom.rows())
    if args.plot:
        n = min(4, a.shape[1])
        for i in range(n):
            io.write_svg(out / f"mode{i + 1}.svg", times,
                         {"ROM": a[:, i], "FOM": exact.coefficients[pick, i]}, title=f"a{i + 1}(t)")
    print(f"summed velocity RMSE {float(np.sum(cols['u'])):.6g} over {report.n_t} samples -> {out}")


def cmd_bench(args):
    cfg = load_config(args.config, args.seed)
    ops, visc = io.load_operators(args.bundle)
    variant = args.variant or ops.meta.get("variant")
    closure, cmeta = (None, None)
    if args.closure:
        closure, cmeta = io.load_closure(args.closure)
    model = assemble_model(variant, ops, visc, closure, cmeta)
    ens = io.load_ensemble(args.ensemble)
    u, _, _ = _load_bases(args.basis, ops.rank, ops.pressure_rank)
    a0 = initial_coefficients(ens, u, ens.times[0])
    rep = benchmark_speedup(cfg, model, a0, args.duration, args.fom_duration, output_dt=ens.dt_snapshot)
    io.write_csv(args.out, rep.HEADER, [rep.row()])
    print(f"FOM {rep.fom_seconds:.4g} s/s, ROM {rep.rom_seconds:.4g} s/s, speedup {rep.ratio:.1f} -> {args.out}")


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbrom", description="Projection-based reduced-order modelling pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=None, help="random seed (default: the config's or 0)")
        p.add_argument("--out", required=True, help="output path")
        return p

    p = add("fom-run", cmd_fom_run, "run a full-order case and write an ensemble directory")
    p.add_argument("--config", required=True, help="bundled config name or JSON path")

    p = add("pod", cmd_pod, "compute POD bases of an ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--rank", type=int, default=None, help="maximum number of modes to keep")

    p = add("build", cmd_build, "assemble the Galerkin operator bundle")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    p.add_argument("--rank", type=int, default=None, help="velocity rank (default: by --energy)")
    p.add_argument("--p-rank", type=int, default=None, help="pressure rank (default: velocity rank)")
    p.add_argument("--energy", type=float, default=0.99, help="energy fraction when --rank is absent")

    p = add("train-closure", cmd_train_closure, "train an ELM or NARX residual closure")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--kind", required=True, choices=("elm", "narx"))
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--regularization", type=float, default=0.0)

    p = add("rom-run", cmd_rom_run, "integrate a reduced model and write its trajectory CSV")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    p.add_argument("--closure", default=None)
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)

    p = add("eval", cmd_eval, "RMSE, deviation and force reports of a trajectory")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--bundle", default=None, help="operator bundle, for the reduced model's viscosity")
    p.add_argument("--variant", default=None)
    p.add_argument("--plot", action="store_true", help="also write SVG plots of the leading modes")

    p = add("bench", cmd_bench, "wall-clock speedup of a reduced model over the full-order solver")
    p.add_argument("--config", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    p.add_argument("--closure", default=None)
    p.add_argument("--duration", type=float, default=1.0, help="simulated seconds")
    p.add_argument("--fom-duration", type=float, default=None, help="shorter full-order span, time-scaled")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # surfaced as a diagnostic, not a traceback
        print(f"pbrom {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
