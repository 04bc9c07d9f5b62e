"""Deterministic resampling of a feature map to K_v tokens x D_e channels.

Spatial reduction is average pooling over a fixed K_v-cell partition of
the map: the grid has r x c cells with r the largest divisor of K_v not
exceeding sqrt(K_v), each cell covering a near-equal contiguous band of
rows and columns, tokens emitted in row-major grid order. Channel
fitting is the identity when widths match, truncation to the leading
D_e channels when the map is wider, and a fixed seeded random
projection when it is narrower — the matrix depends only on
(pathway, source width, D_e), so every run of every machine agrees.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import JobError


def partition_grid(k_v: int) -> tuple[int, int]:
    """The r x c token grid used for a K_v-token partition (r * c == K_v)."""
    if k_v < 1:
        raise JobError(f"token count must be positive, got {k_v}")
    r = max(d for d in range(1, math.isqrt(k_v) + 1) if k_v % d == 0)
    return r, k_v // r


def pool_tokens(fmap: np.ndarray, k_v: int) -> np.ndarray:
    """Average-pool an (H, W, C) map into (K_v, C) tokens."""
    if fmap.ndim != 3:
        raise JobError(f"feature map must be (H, W, C), got shape {fmap.shape}")
    h, w, c = fmap.shape
    rows_n, cols_n = partition_grid(k_v)
    if h < rows_n or w < cols_n:
        raise JobError(
            f"feature map {h}x{w} too small for a {rows_n}x{cols_n} token grid"
        )
    row_bands = np.array_split(np.arange(h), rows_n)
    col_bands = np.array_split(np.arange(w), cols_n)
    tokens = [
        fmap[rs][:, cs].reshape(-1, c).mean(axis=0)
        for rs in row_bands
        for cs in col_bands
    ]
    return np.stack(tokens)


def _projection_seed(pathway: str, width: int, d_e: int) -> int:
    digest = hashlib.sha256(f"evgf-project:{pathway}:{width}:{d_e}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def fit_channels(tokens: np.ndarray, d_e: int, *, pathway: str) -> np.ndarray:
    """Fit (K_v, C) tokens to (K_v, D_e): identity, truncate, or fixed projection."""
    if tokens.ndim != 2:
        raise JobError(f"tokens must be (K_v, C), got shape {tokens.shape}")
    width = tokens.shape[1]
    if width == d_e:
        return tokens
    if width > d_e:
        return tokens[:, :d_e]
    rng = np.random.Generator(np.random.PCG64(_projection_seed(pathway, width, d_e)))
    proj = rng.standard_normal((width, d_e)) / math.sqrt(width)
    return tokens @ proj
