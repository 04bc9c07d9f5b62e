"""Reader and writer for the expert visual-grounding feature format.

Layout, all little-endian: magic ``EVGF``, u32 version (1), u8 pathway
code (0 = metric, 1 = structural), u32 frame count, u32 tokens per frame
(K_v), u32 channels per token (D_e), followed by
``frames * K_v * D_e`` float32 values in row-major order.

This module is deliberately self-contained: the exporter talks to the
training core only through files, so it carries its own implementation
of the format instead of importing the core's.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import EvgfError

MAGIC = b"EVGF"
VERSION = 1
PATHWAY_CODES = {"metric": 0, "structural": 1}
PATHWAY_NAMES = {code: name for name, code in PATHWAY_CODES.items()}

# magic, version, pathway, frame_count, k_v, d_e -> 21 bytes, no padding
_HEADER = struct.Struct("<4sIBIII")


def feature_bytes(pathway: str, frames: np.ndarray) -> bytes:
    """Serialize a (frames, K_v, D_e) block for one pathway."""
    if pathway not in PATHWAY_CODES:
        raise EvgfError(f"unknown pathway {pathway!r}; have metric, structural")
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim != 3:
        raise EvgfError(f"feature block must be (frames, K_v, D_e), got shape {arr.shape}")
    finite = np.isfinite(arr.reshape(-1))
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise EvgfError(f"non-finite feature value at payload index {bad}")
    count, k_v, d_e = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, PATHWAY_CODES[pathway], count, k_v, d_e)
    return header + arr.astype("<f4", copy=False).tobytes(order="C")


def write_evgf(path, pathway: str, frames: np.ndarray) -> bytes:
    """Write one feature file; returns the exact bytes written."""
    blob = feature_bytes(pathway, frames)
    Path(path).write_bytes(blob)
    return blob


def parse_evgf(blob: bytes) -> tuple[str, np.ndarray]:
    """Decode a feature file into (pathway name, float32 (F, K_v, D_e) array)."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise EvgfError("bad magic at offset 0: not an EVGF file")
    if len(blob) < _HEADER.size:
        raise EvgfError(
            f"truncated header at offset {len(blob)}: need {_HEADER.size} bytes"
        )
    _, version, code, count, k_v, d_e = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise EvgfError(f"unsupported version {version} at offset 4")
    if code not in PATHWAY_NAMES:
        raise EvgfError(f"unknown pathway code {code} at offset 8")
    expected = count * k_v * d_e * 4
    have = len(blob) - _HEADER.size
    if have != expected:
        where = min(len(blob), _HEADER.size + expected)
        raise EvgfError(
            f"payload length mismatch at offset {where}: "
            f"have {have} bytes, header promises {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(count, k_v, d_e)
    finite = np.isfinite(data.reshape(-1))
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise EvgfError(f"non-finite value at offset {_HEADER.size + 4 * bad}")
    return PATHWAY_NAMES[code], data.astype(np.float32)


def read_evgf(path) -> tuple[str, np.ndarray]:
    """Read and decode one feature file."""
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise EvgfError(f"cannot read feature file {p}: {exc}") from None
    return parse_evgf(blob)
