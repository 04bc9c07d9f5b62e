"""Binary artifact formats: model checkpoints and expert feature files.

Both formats are little-endian throughout and deterministic byte-for-byte:
writing the same tensors twice yields identical files. Parse failures raise
FormatError carrying the byte offset of the offending field.

Checkpoint ("GAMS" v1):
    magic "GAMS" | u32 version | u32 tensor_count
    per tensor: u16 name_len | name utf-8 | u8 dtype (0=f32, 1=f64)
                | u8 rank | u32 extents... | payload row-major

Expert features ("EVGF" v1):
    magic "EVGF" | u32 version | u8 pathway (0=metric, 1=structural)
    | u32 frame_count | u32 K_v | u32 D_e | f32 payload row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError
from .evg import ExpertFeatureSet

CHECKPOINT_MAGIC = b"GAMS"
EXPERT_MAGIC = b"EVGF"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_PATHWAY_CODES = {"metric": 0, "structural": 1}
_CODE_PATHWAYS = {v: k for k, v in _PATHWAY_CODES.items()}


class _Reader:
    """Cursor over a byte string that reports offsets on every failure."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated: needed {n} bytes for {what}, have {len(self.blob) - self.pos}",
                offset=self.pos,
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def expect_magic(self, magic: bytes) -> None:
        at = self.pos
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=at)

    def expect_version(self) -> None:
        at = self.pos
        v = self.u32("version")
        if v != VERSION:
            raise FormatError(f"unsupported version {v}, expected {VERSION}", offset=at)

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(
                f"{len(self.blob) - self.pos} trailing bytes after payload",
                offset=self.pos,
            )


# -- checkpoints ---------------------------------------------------------


def checkpoint_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _DTYPE_CODES.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise CompatibilityError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CompatibilityError(f"tensor name too long: {len(raw)} bytes")
        if arr.ndim > 0xFF:
            raise CompatibilityError(f"tensor {name!r} rank {arr.ndim} exceeds format limit")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())
    return b"".join(parts)


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(checkpoint_bytes(tensors))


def parse_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    r = _Reader(blob)
    r.expect_magic(CHECKPOINT_MAGIC)
    r.expect_version()
    count = r.u32("tensor_count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u16(f"name length of tensor {i}")
        at = r.pos
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor {i} name is not valid utf-8", offset=at) from None
        at = r.pos
        code = r.u8(f"dtype of {name!r}")
        if code not in _CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name!r}", offset=at)
        dtype = _CODE_DTYPES[code]
        rank = r.u8(f"rank of {name!r}")
        shape = tuple(r.u32(f"extent {d} of {name!r}") for d in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        at = r.pos
        payload = r.take(n * dtype.itemsize, f"payload of {name!r}")
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=at)
        out[name] = arr
    r.done()
    return out


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return parse_checkpoint(Path(path).read_bytes())


def model_state(model) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in model.named_parameters().items()}


def load_into_model(model, path) -> None:
    """Restore parameters in place; the file must carry exactly the names,
    shapes, and dtypes the model was built with."""
    tensors = read_checkpoint(path)
    params = model.named_parameters()
    missing = sorted(set(params) - set(tensors))
    unexpected = sorted(set(tensors) - set(params))
    if missing or unexpected:
        raise CompatibilityError(
            f"checkpoint does not match model: missing {missing or 'none'}, "
            f"unexpected {unexpected or 'none'}"
        )
    for name, p in params.items():
        arr = tensors[name]
        if arr.shape != p.shape:
            raise CompatibilityError(
                f"tensor {name!r}: checkpoint shape {arr.shape} vs model {p.shape}"
            )
        if arr.dtype.newbyteorder("=") != p.dtype:
            raise CompatibilityError(
                f"tensor {name!r}: checkpoint dtype {arr.dtype} vs model {p.dtype}"
            )
        p.data = arr.astype(p.dtype, copy=True)


# -- expert feature files --------------------------------------------------


def expert_bytes(feature_set: ExpertFeatureSet) -> bytes:
    head = struct.pack(
        "<IBIII",
        VERSION,
        _PATHWAY_CODES[feature_set.pathway],
        feature_set.frame_count,
        feature_set.k_v,
        feature_set.d_e,
    )
    frames = [
        np.ascontiguousarray(f, dtype="<f4").tobytes() for f in feature_set.frames
    ]
    return EXPERT_MAGIC + head + b"".join(frames)


def write_expert_file(feature_set: ExpertFeatureSet, path) -> None:
    Path(path).write_bytes(expert_bytes(feature_set))


def parse_expert(blob: bytes) -> ExpertFeatureSet:
    r = _Reader(blob)
    r.expect_magic(EXPERT_MAGIC)
    r.expect_version()
    at = r.pos
    code = r.u8("pathway")
    if code not in _CODE_PATHWAYS:
        raise FormatError(f"unknown pathway code {code}", offset=at)
    frame_count = r.u32("frame_count")
    k_v = r.u32("K_v")
    d_e = r.u32("D_e")
    per_frame = k_v * d_e
    frames = []
    for i in range(frame_count):
        at = r.pos
        payload = r.take(per_frame * 4, f"frame {i} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(k_v, d_e).copy()
        if not np.isfinite(arr).all():
            bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
            raise FormatError(
                f"non-finite value in frame {i}", offset=at + bad * 4
            )
        frames.append(arr)
    r.done()
    return ExpertFeatureSet(_CODE_PATHWAYS[code], frames, shape=(k_v, d_e))


def read_expert_file(path) -> ExpertFeatureSet:
    return parse_expert(Path(path).read_bytes())
