"""Compatibility check between a feature file and a training-run config.

``verify_compat`` never raises: every failure comes back as a falsy
result whose reason names the mismatched values (or the byte offset for
corrupted files). The config side is the training core's saved JSON —
read here as plain JSON so this package stays independent of the core.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EvgfError
from .evgf import parse_evgf

# Which pathways each training variant actually supervises.
ACTIVE_PATHWAYS = {
    "baseline": (),
    "struct-only": ("structural",),
    "no-mask": ("metric", "structural"),
    "full": ("metric", "structural"),
}


@dataclass(frozen=True)
class CompatResult:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _fail(reason: str) -> CompatResult:
    return CompatResult(False, reason)


def _config_dict(core_config) -> tuple[dict | None, str]:
    if isinstance(core_config, dict):
        return core_config, ""
    path = Path(core_config)
    try:
        text = path.read_text()
    except OSError as exc:
        return None, f"cannot read config {path}: {exc}"
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, f"config {path} is not valid JSON: {exc}"
    if not isinstance(cfg, dict):
        return None, f"config {path} must hold a JSON object"
    return cfg, ""


def verify_compat(evgf_path, core_config) -> CompatResult:
    """Does this feature file fit that training run? Pass/fail with a reason.

    Checks the file parses cleanly, its K_v/D_e match the config's
    grounding-head geometry, and its pathway is one the config's variant
    supervises. ``core_config`` is a path to the core's saved JSON config
    (or an equivalent dict)."""
    try:
        blob = Path(evgf_path).read_bytes()
    except OSError as exc:
        return _fail(f"cannot read feature file {evgf_path}: {exc}")
    try:
        pathway, data = parse_evgf(blob)
    except EvgfError as exc:
        return _fail(f"corrupted feature file {evgf_path}: {exc}")

    cfg, problem = _config_dict(core_config)
    if cfg is None:
        return _fail(problem)
    heads = cfg.get("heads")
    if not isinstance(heads, dict) or "k_v" not in heads or "d_e" not in heads:
        return _fail("config lacks heads.k_v / heads.d_e")
    file_kv, file_de = data.shape[1], data.shape[2]
    if file_kv != heads["k_v"]:
        return _fail(f"K_v mismatch: file has {file_kv}, config has {heads['k_v']}")
    if file_de != heads["d_e"]:
        return _fail(f"D_e mismatch: file has {file_de}, config has {heads['d_e']}")
    variant = cfg.get("variant", "full")
    active = ACTIVE_PATHWAYS.get(variant)
    if active is None:
        return _fail(f"unknown variant {variant!r} in config")
    if pathway not in active:
        return _fail(f"pathway '{pathway}' is inactive under variant '{variant}'")
    return CompatResult(True, "compatible")
