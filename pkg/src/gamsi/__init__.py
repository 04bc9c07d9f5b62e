"""Desk-scale dual-pathway spatial reasoning model.

Submodules are imported lazily so that the command-line front end can pin
thread-count environment variables before numpy first loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "BackboneConfig": "backbone",
    "GamsiModel": "model",
    "HeadConfig": "evg",
    "GroundingHead": "evg",
    "ExpertFeatureSet": "evg",
    "SequenceLayout": "masking",
    "build_layout": "masking",
    "build_mask": "masking",
    "verify_mask": "masking",
    "Tensor": "tensor",
    "Parameter": "tensor",
    "grad_check": "gradcheck",
    "GamsiEstimator": "estimator",
}


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'gamsi' has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
