"""Export jobs: a validated description of one image-to-features run."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import BACKEND_NAMES, BUILTIN, MODEL_BACKENDS, make_backend
from .errors import JobError
from .evgf import PATHWAY_CODES, feature_bytes
from .image_io import load_image
from .resample import fit_channels, pool_tokens

RESAMPLE_POLICIES = ("average",)


@dataclass(frozen=True)
class ExportJob:
    """One run: images in, a single EVGF file out (one frame per image)."""

    inputs: tuple
    pathway: str
    k_v: int
    d_e: int
    output: str
    resample: str = "average"
    backend: str = BUILTIN
    weights: str | None = None
    layer: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        object.__setattr__(self, "output", str(self.output))
        if not self.inputs:
            raise JobError("at least one input image is required")
        if self.pathway not in PATHWAY_CODES:
            raise JobError(f"unknown pathway {self.pathway!r}; have metric, structural")
        if self.k_v < 1 or self.d_e < 1:
            raise JobError(
                f"token and channel counts must be positive, got K_v={self.k_v}, D_e={self.d_e}"
            )
        if self.resample not in RESAMPLE_POLICIES:
            raise JobError(
                f"unknown resample policy {self.resample!r}; have "
                + ", ".join(RESAMPLE_POLICIES)
            )
        if self.backend not in BACKEND_NAMES:
            raise JobError(
                f"unknown backend {self.backend!r}; have " + ", ".join(BACKEND_NAMES)
            )
        serves = MODEL_BACKENDS.get(self.backend)
        if serves is not None and serves != self.pathway:
            raise JobError(
                f"backend '{self.backend}' produces {serves} features, "
                f"job asks for {self.pathway}"
            )


def export_features(job: ExportJob) -> bytes:
    """Run one job end to end; writes the EVGF file and returns its bytes."""
    backend = make_backend(job)
    frames = []
    for path in job.inputs:
        image = load_image(path)
        fmap = backend.feature_map(image)
        tokens = pool_tokens(fmap, job.k_v)
        frames.append(fit_channels(tokens, job.d_e, pathway=job.pathway))
    blob = feature_bytes(job.pathway, np.stack(frames).astype(np.float32))
    try:
        Path(job.output).write_bytes(blob)
    except OSError as exc:
        raise JobError(f"cannot write output {job.output}: {exc}") from None
    return blob
