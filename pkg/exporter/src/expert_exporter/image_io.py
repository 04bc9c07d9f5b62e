"""Image loading: native PPM (P6/P3) plus Pillow for other formats.

Every loader returns an (H, W, 3) float32 array scaled to [0, 1].
PPM is decoded natively so the fixture pipeline has zero image
dependencies; anything else goes through Pillow when it is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ImageError


def load_image(path) -> np.ndarray:
    """Load one image as (H, W, 3) float32 in [0, 1]."""
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {p}: {exc}") from None
    if blob[:2] in (b"P6", b"P3"):
        return _decode_ppm(blob, p)
    return _decode_pillow(p)


def _decode_pillow(p: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:
        raise ImageError(
            f"cannot decode image {p}: not a PPM and Pillow is not installed"
        ) from None
    try:
        with Image.open(p) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:
        raise ImageError(f"cannot decode image {p}: {exc}") from None
    return arr / 255.0


def _ppm_tokens(blob: bytes, needed: int, p: Path) -> tuple[list[bytes], int]:
    """Read `needed` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset one past the single whitespace byte
    that terminates the last token (where P6 pixel data begins)."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < needed:
        if i >= len(blob):
            raise ImageError(f"cannot decode image {p}: truncated PPM header")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < len(blob) and not blob[i : i + 1].isspace() and blob[i : i + 1] != b"#":
                i += 1
            tokens.append(blob[start:i])
            if len(tokens) == needed:
                if i < len(blob) and blob[i : i + 1].isspace():
                    i += 1  # exactly one whitespace byte separates header from data
    return tokens, i


def _decode_ppm(blob: bytes, p: Path) -> np.ndarray:
    tokens, offset = _ppm_tokens(blob, 4, p)
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageError(f"cannot decode image {p}: non-numeric PPM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageError(
            f"cannot decode image {p}: bad PPM dimensions {width}x{height} max {maxval}"
        )
    n = width * height * 3
    if magic == b"P6":
        wide = maxval > 255
        need = n * (2 if wide else 1)
        raw = blob[offset : offset + need]
        if len(raw) < need:
            raise ImageError(f"cannot decode image {p}: truncated PPM pixel data")
        dtype = ">u2" if wide else np.uint8
        flat = np.frombuffer(raw, dtype=dtype, count=n).astype(np.float32)
    elif magic == b"P3":
        parts = blob[offset:].split()
        if len(parts) < n:
            raise ImageError(f"cannot decode image {p}: truncated PPM pixel data")
        try:
            flat = np.array([int(v) for v in parts[:n]], dtype=np.float32)
        except ValueError:
            raise ImageError(f"cannot decode image {p}: non-numeric PPM pixels") from None
    else:
        raise ImageError(f"cannot decode image {p}: unsupported PPM magic {magic!r}")
    if flat.max(initial=0.0) > maxval:
        raise ImageError(f"cannot decode image {p}: pixel exceeds declared max {maxval}")
    return (flat / float(maxval)).reshape(height, width, 3)
