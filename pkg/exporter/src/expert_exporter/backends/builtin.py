"""Self-contained feature extractors for running without model weights.

These are fixed pixel statistics, not learned features. The metric map
stacks brightness, contrast, and gradient channels that loosely track
depth cues; the structural map stacks position, opponent-color, and
signed-orientation channels that loosely track layout and viewpoint.
Their job is to be deterministic, shape-correct stand-ins so export
pipelines can be exercised end to end without downloading weights.
"""

from __future__ import annotations

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _luminance(image: np.ndarray) -> np.ndarray:
    return image @ _LUMA


def _box3(plane: np.ndarray) -> np.ndarray:
    """3x3 box mean with replicated edges."""
    padded = np.pad(plane, 1, mode="edge")
    acc = np.zeros_like(plane, dtype=np.float32)
    h, w = plane.shape
    for dr in range(3):
        for dc in range(3):
            acc += padded[dr : dr + h, dc : dc + w]
    return acc / 9.0


class BuiltinBackend:
    """Deterministic per-pixel statistics for one pathway."""

    name = "builtin"

    def __init__(self, pathway: str):
        self.pathway = pathway

    def feature_map(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        if self.pathway == "metric":
            return _metric_map(image)
        return _structural_map(image)


def _metric_map(image: np.ndarray) -> np.ndarray:
    y = _luminance(image)
    gy, gx = np.gradient(y)
    mean3 = _box3(y)
    h, w = y.shape
    rr = np.linspace(-1.0, 1.0, h, dtype=np.float32)[:, None] * np.ones((1, w), np.float32)
    cc = np.linspace(-1.0, 1.0, w, dtype=np.float32)[None, :] * np.ones((h, 1), np.float32)
    radial = np.sqrt(rr**2 + cc**2) / np.sqrt(np.float32(2.0))
    channels = [
        y,
        1.0 - y,
        np.abs(gx),
        np.abs(gy),
        np.sqrt(gx**2 + gy**2),
        mean3,
        np.abs(y - mean3),
        radial,
    ]
    return np.stack(channels, axis=-1).astype(np.float32)


def _structural_map(image: np.ndarray) -> np.ndarray:
    y = _luminance(image)
    gy, gx = np.gradient(y)
    h, w = y.shape
    xs = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :] * np.ones((h, 1), np.float32)
    ys = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None] * np.ones((1, w), np.float32)
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    channels = [xs, ys, r - g, g - b, gx, gy, y * xs, y * ys]
    return np.stack(channels, axis=-1).astype(np.float32)
