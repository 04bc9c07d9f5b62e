"""Backend registry: which feature extractor serves an export job.

``builtin`` computes deterministic pixel statistics and needs nothing.
The model backends wrap real pretrained experts shipped as TorchScript
files: ``depth-anything-v2`` for the metric pathway and ``vggt`` for
the structural pathway. A model backend refuses a job for the other
pathway — mixing them up is almost certainly a mistake.
"""

from __future__ import annotations

from ..errors import JobError
from .builtin import BuiltinBackend
from .torchscript import TorchScriptBackend

BUILTIN = "builtin"
MODEL_BACKENDS = {
    "depth-anything-v2": "metric",
    "vggt": "structural",
}
BACKEND_NAMES = (BUILTIN, *sorted(MODEL_BACKENDS))


def make_backend(job):
    """Instantiate the extractor an ExportJob asks for."""
    if job.backend == BUILTIN:
        if job.layer not in (None, "final"):
            raise JobError(
                f"builtin backend has only its final map; got layer {job.layer!r}"
            )
        return BuiltinBackend(job.pathway)
    if job.backend in MODEL_BACKENDS:
        serves = MODEL_BACKENDS[job.backend]
        if serves != job.pathway:
            raise JobError(
                f"backend '{job.backend}' produces {serves} features, "
                f"job asks for {job.pathway}"
            )
        return TorchScriptBackend(job.backend, job.weights, job.layer)
    raise JobError(
        f"unknown backend {job.backend!r}; have " + ", ".join(BACKEND_NAMES)
    )
