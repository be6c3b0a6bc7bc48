"""Shared fixtures: bundled ensembles cached across sessions, acceptance summary."""
import hashlib
import json
from importlib import resources

import pytest

from pbrom import io
from pbrom.fom import run_and_collect
from pbrom.presets import load_config

ACCEPTANCE: dict[int, tuple[bool, str]] = {}

# sources whose changes invalidate a cached ensemble
_SOLVER_SOURCES = ("fom.py", "grid.py", "presets.py")


def _cache_key(name: str) -> str:
    cfg = load_config(name)
    h = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    pkg = resources.files("pbrom")
    for src in _SOLVER_SOURCES:
        h.update(pkg.joinpath(src).read_bytes())
    return f"{name}-{h.hexdigest()[:16]}"


def bundled_ensemble(request, name):
    """Run (or reuse) the bundled configuration ``name``."""
    root = request.config.cache.mkdir("pbrom-ensembles")
    path = root / _cache_key(name)
    if (path / "manifest.json").is_file():
        try:
            return io.load_ensemble(path)
        except io.FormatError:
            pass
    ens = run_and_collect(load_config(name))
    io.save_ensemble(ens, path)
    return io.load_ensemble(path)


@pytest.fixture(scope="session")
def burgers_bundled(request):
    return bundled_ensemble(request, "burgers1d")


@pytest.fixture(scope="session")
def obstacle_bundled(request):
    return bundled_ensemble(request, "ns2d_obstacle")


@pytest.fixture(scope="session")
def periodic_bundled(request):
    return bundled_ensemble(request, "ns2d_periodic")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
