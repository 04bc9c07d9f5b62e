"""Bridge to pretrained vision models exported as TorchScript.

The registered backend names cover the two expert roles: a metric-depth
model and a 3D-structure model. Each needs a local TorchScript file
(``--weights``); export the real checkpoint once with ``torch.jit.trace``
or ``torch.jit.script`` and point the exporter at the result. Inference
runs on CPU in eval mode under ``no_grad``, so identical inputs give
identical features.

The module is fed a (1, 3, H, W) float32 tensor in [0, 1]. Its output
may be a tensor, a list/tuple of feature maps, or a dict of named maps;
``--layer`` selects which map to export (default: the final one).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import JobError, WeightsError


class TorchScriptBackend:
    """Run one TorchScript expert and hand back its chosen feature map."""

    def __init__(self, name: str, weights, layer: str | None = None):
        self.name = name
        self.weights = weights
        self.layer = layer

    def feature_map(self, image: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise WeightsError(
                f"missing weights for backend '{self.name}': "
                "pass --weights with a TorchScript file"
            )
        path = Path(self.weights)
        if not path.exists():
            raise WeightsError(f"missing weights for backend '{self.name}': {path}")
        try:
            import torch
        except ImportError:
            raise WeightsError(
                f"backend '{self.name}' needs torch installed to load {path}"
            ) from None
        try:
            module = torch.jit.load(str(path), map_location="cpu")
        except Exception as exc:
            raise WeightsError(
                f"cannot load weights for backend '{self.name}' from {path}: {exc}"
            ) from None
        module.eval()
        chw = np.ascontiguousarray(np.transpose(image, (2, 0, 1)), dtype=np.float32)
        with torch.no_grad():
            out = module(torch.from_numpy(chw)[None])
        return self._to_map(self._select(out))

    def _select(self, out):
        if isinstance(out, dict):
            key = self.layer if self.layer is not None else "final"
            if key not in out:
                raise JobError(
                    f"layer {key!r} not in module outputs {sorted(out)}"
                )
            return out[key]
        if isinstance(out, (list, tuple)):
            if not out:
                raise JobError(f"backend '{self.name}' returned no feature maps")
            if self.layer is None:
                return out[-1]
            try:
                return out[int(self.layer)]
            except (ValueError, IndexError):
                raise JobError(
                    f"layer {self.layer!r} not valid for {len(out)} module outputs"
                ) from None
        if self.layer not in (None, "final"):
            raise JobError(
                f"module returns a single map; layer {self.layer!r} cannot be selected"
            )
        return out

    def _to_map(self, tensor) -> np.ndarray:
        arr = np.asarray(tensor.detach().cpu().numpy(), dtype=np.float32)
        if arr.ndim == 4:
            arr = arr[0]
        if arr.ndim == 3:
            return np.transpose(arr, (1, 2, 0))  # (C, H, W) -> (H, W, C)
        if arr.ndim == 2:
            return arr[..., None]
        raise JobError(
            f"backend '{self.name}' produced a rank-{arr.ndim} output; "
            "need a (C, H, W) feature map"
        )
