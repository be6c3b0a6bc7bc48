"""On-disk formats.

* Ensemble: a directory with ``manifest.json`` and one ``<variable>.bin`` per
  variable (little-endian float64, snapshot-major, shape ``(M, N)``).
* Basis: a directory with ``manifest.json``, ``mean.bin`` and ``modes.bin``.
* Bundle (operators, closure models): one file holding a magic line, a JSON
  header line and the raw little-endian float64 arrays it lists.
* Trajectories and reports: CSV with 17 significant digits.

Every downstream artifact carries the case hash of the ensemble it came from.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .closure import ElmModel, MinMax, NarxModel
from .fom import FlowBCs, SnapshotEnsemble
from .galerkin import GalerkinOperators, ViscosityModelSpec
from .grid import FluidConstants, StructuredGrid
from .pod import PodBasis

FORMAT_VERSION = 1
BUNDLE_MAGIC = b"PBROM-BUNDLE 1\n"
DTYPE = "<f8"


class FormatError(ValueError):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def case_hash(manifest: dict) -> str:
    """SHA-256 of the canonical manifest content (excluding the hash itself)."""
    content = {k: v for k, v in manifest.items() if k != "case_hash"}
    return hashlib.sha256(_canonical(content).encode()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_bin(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype=DTYPE).tobytes())


def _read_bin(path: Path, shape) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype=DTYPE)
    if data.size != int(np.prod(shape)):
        raise FormatError(f"{path.name}: expected {int(np.prod(shape))} values, found {data.size}")
    return data.reshape(shape).astype(float)


# ---------------------------------------------------------------- ensembles
def save_ensemble(ens: SnapshotEnsemble, path) -> str:
    """Write an ensemble directory and return its case hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(ens.data)
    manifest = {
        "format": "pbrom-ensemble",
        "version": FORMAT_VERSION,
        "grid": ens.grid.to_dict(),
        "times": [float(t) for t in ens.times],
        "dt_snapshot": ens.dt_snapshot,
        "t_end": float(ens.times[-1] - ens.times[0]),
        "variables": names,
        "constants": {"rho": ens.constants.rho, "nu_m": ens.constants.nu_m},
        "bcs": ens.bcs.to_json(),
        "meta": ens.meta,
    }
    manifest["case_hash"] = case_hash(manifest)
    for name in names:
        _write_bin(path / f"{name}.bin", ens.data[name])
    _write_json(path / "manifest.json", manifest)
    return manifest["case_hash"]


def read_manifest(path) -> dict:
    path = Path(path)
    f = path / "manifest.json" if path.is_dir() else path
    try:
        return json.loads(f.read_text())
    except FileNotFoundError:
        raise FormatError(f"no manifest at {f}") from None


def load_ensemble(path) -> SnapshotEnsemble:
    path = Path(path)
    m = read_manifest(path)
    if m.get("format") != "pbrom-ensemble":
        raise FormatError(f"{path} is not an ensemble directory")
    if case_hash(m) != m.get("case_hash"):
        raise FormatError(f"{path}: manifest does not match its case hash")
    grid = StructuredGrid.from_dict(m["grid"])
    times = np.asarray(m["times"], dtype=float)
    data = {name: _read_bin(path / f"{name}.bin", (times.size, grid.n_fluid)) for name in m["variables"]}
    meta = dict(m.get("meta", {}))
    meta["case_hash"] = m["case_hash"]
    return SnapshotEnsemble(grid, times, data, FluidConstants(**m["constants"]),
                            FlowBCs.from_json(m["bcs"], grid.ndim), meta)


# ---------------------------------------------------------------- bases
def save_basis(basis: PodBasis, path, case: str | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "pbrom-basis",
        "version": FORMAT_VERSION,
        "variable": basis.variable,
        "rank": basis.rank,
        "field_shape": list(basis.mean.shape),
        "eigenvalues": [float(x) for x in basis.eigenvalues],
        "grid": basis.grid.to_dict(),
        "case_hash": case,
    }
    _write_bin(path / "mean.bin", basis.mean)
    _write_bin(path / "modes.bin", basis.modes)
    _write_json(path / "manifest.json", manifest)


def load_basis(path) -> tuple[PodBasis, str | None]:
    path = Path(path)
    m = read_manifest(path)
    if m.get("format") != "pbrom-basis":
        raise FormatError(f"{path} is not a basis directory")
    shape = tuple(m["field_shape"])
    mean = _read_bin(path / "mean.bin", shape)
    modes = _read_bin(path / "modes.bin", (m["rank"],) + shape)
    grid = StructuredGrid.from_dict(m["grid"])
    return PodBasis(m["variable"], mean, modes, np.asarray(m["eigenvalues"]), grid), m.get("case_hash")


# ---------------------------------------------------------------- bundles
def write_bundle(path, kind: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Single-file container: magic, one JSON header line, raw arrays."""
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=DTYPE)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    head = dict(header)
    head.update({"kind": kind, "version": FORMAT_VERSION, "dtype": DTYPE, "arrays": entries})
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(_canonical(head).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)


def read_bundle(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(BUNDLE_MAGIC):
        raise FormatError(f"{path} is not a bundle file")
    end = raw.index(b"\n", len(BUNDLE_MAGIC))
    head = json.loads(raw[len(BUNDLE_MAGIC):end])
    if kind is not None and head.get("kind") != kind:
        raise FormatError(f"{path} holds a {head.get('kind')!r} bundle, expected {kind!r}")
    body = raw[end + 1:]
    arrays = {}
    for e in head["arrays"]:
        chunk = body[e["offset"]: e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype=DTYPE).reshape(e["shape"]).astype(float)
    return head, arrays


_VISC_ARRAYS = ("nu_mean", "mode", "a1_times", "a1_values")


def save_operators(path, ops: GalerkinOperators, visc: ViscosityModelSpec) -> None:
    arrays = {f"op.{k}": v for k, v in ops.arrays().items()}
    for name in _VISC_ARRAYS:
        val = getattr(visc, name)
        if val is not None:
            arrays[f"visc.{name}"] = val
    header = {
        "meta": ops.meta,
        "viscosity_variant": ops.viscosity_variant,
        "viscosity": {"variant": visc.variant, "nu_m": visc.nu_m, "nu_bar": visc.nu_bar,
                      "degenerate": visc.degenerate, "min_training_nu_e": visc.min_training_nu_e},
    }
    write_bundle(path, "operators", header, arrays)


def load_operators(path) -> tuple[GalerkinOperators, ViscosityModelSpec]:
    head, arrays = read_bundle(path, "operators")
    ops = GalerkinOperators(**{k: arrays[f"op.{k}"] for k in GalerkinOperators.ARRAYS},
                            viscosity_variant=head["viscosity_variant"], meta=head["meta"])
    v = head["viscosity"]
    visc = ViscosityModelSpec(v["variant"], v["nu_m"], nu_bar=v["nu_bar"], degenerate=v["degenerate"],
                              min_training_nu_e=v["min_training_nu_e"],
                              **{k: arrays.get(f"visc.{k}") for k in _VISC_ARRAYS})
    return ops, visc


def save_closure(path, model: ElmModel | NarxModel, meta: dict) -> None:
    if isinstance(model, ElmModel):
        arrays = {"W1": model.W1, "B1": model.B1, "W2": model.W2, "input_scale": model.input_scale}
        header = {"seed": model.seed, "regularization": model.regularization,
                  "hidden_size": model.hidden_size, "n_features": model.n_features}
    elif isinstance(model, NarxModel):
        arrays = {"W1": model.W1, "b1": model.b1, "W2": model.W2, "b2": model.b2,
                  "x_lo": model.x_norm.lo, "x_hi": model.x_norm.hi,
                  "y_lo": model.y_norm.lo, "y_hi": model.y_norm.hi}
        header = {"seed": model.seed, "sample_dt": model.sample_dt, "hidden_size": model.hidden_size,
                  "n_features": model.n_features, "input_delay": 1, "feedback_delay": 1}
    else:
        raise FormatError(f"cannot serialise closure {type(model).__name__}")
    header["report"] = model.report
    header["meta"] = meta
    write_bundle(path, model.kind, header, arrays)


def load_closure(path) -> tuple[ElmModel | NarxModel, dict]:
    head, a = read_bundle(path)
    if head["kind"] == "elm":
        model = ElmModel(a["W1"], a["B1"], a["W2"], a["input_scale"], head["seed"],
                         head["regularization"], head["report"])
    elif head["kind"] == "narx":
        model = NarxModel(a["W1"], a["b1"], a["W2"], a["b2"], MinMax(a["x_lo"], a["x_hi"]),
                          MinMax(a["y_lo"], a["y_hi"]), head["sample_dt"], head["seed"], head["report"])
    else:
        raise FormatError(f"{path} is not a closure model (kind {head['kind']!r})")
    return model, head["meta"]


# ---------------------------------------------------------------- CSV / SVG
def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else format(float(v), ".17g") for v in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return rows[0], data.reshape(len(rows) - 1, len(rows[0]))


def write_trajectory(path, traj) -> None:
    r, rp = traj.a_u.shape[1], traj.a_p.shape[1]
    header = (["time"] + [f"a{i + 1}" for i in range(r)] + [f"b{i + 1}" for i in range(rp)]
              + [f"closure{i + 1}" for i in range(r)])
    rows = np.column_stack([traj.times, traj.a_u, traj.a_p, traj.closure])
    write_csv(path, header, rows)


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, velocity and pressure coefficients of a trajectory CSV."""
    header, data = read_csv(path)
    cols = {h: k for k, h in enumerate(header)}
    a = [cols[h] for h in header if h.startswith("a")]
    b = [cols[h] for h in header if h.startswith("b")]
    return data[:, cols["time"]], data[:, a], data[:, b]


def write_svg(path, times, series: dict[str, np.ndarray], title: str = "", width=640, height=320) -> None:
    """Minimal polyline plot of one or more time series."""
    colours = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
    t = np.asarray(times, dtype=float)
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(1)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    m = 40

    def xy(tt, yy):
        return (m + (tt - t0) / (t1 - t0) * (width - 2 * m), height - m - (yy - lo) / (hi - lo) * (height - 2 * m))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{m}" y="20" font-size="13">{title}</text>',
             f'<text x="4" y="{m}" font-size="10">{hi:.3g}</text>',
             f'<text x="4" y="{height - m}" font-size="10">{lo:.3g}</text>']
    for k, (label, y) in enumerate(zip(series, ys)):
        pts = " ".join("%.2f,%.2f" % xy(a, b) for a, b in zip(t, y) if np.isfinite(b))
        c = colours[k % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{width - m - 60}" y="{20 + 12 * k}" font-size="10" fill="{c}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
