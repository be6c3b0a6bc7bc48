"""Bundled full-order configurations."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .fom import FomConfig

BUNDLED = ("burgers1d", "ns2d_obstacle", "ns2d_periodic")


def load_config(name_or_path: str, seed: int | None = None) -> FomConfig:
    """A bundled configuration by name, or a JSON file by path; ``seed`` overrides the stored one."""
    if name_or_path in BUNDLED:
        text = resources.files("pbrom").joinpath("configs").joinpath(f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise FileNotFoundError(f"{name_or_path!r} is neither a bundled config {BUNDLED} nor a file")
        text = path.read_text()
    d = json.loads(text)
    if seed is not None:
        d["seed"] = int(seed)
    return FomConfig.from_dict(d)
