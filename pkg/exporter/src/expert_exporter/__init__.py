"""Offline exporter: images in, expert visual-grounding feature files out.

Runs a chosen feature extractor over input frames, average-pools the map
to K_v tokens over a fixed spatial partition, fits channels to D_e, and
writes the EVGF file the training core consumes. Talks to the core only
through files: EVGF out, the core's saved JSON config in (for
``verify_compat``). Never imports the core.
"""

from .compat import ACTIVE_PATHWAYS, CompatResult, verify_compat
from .errors import EvgfError, ExporterError, ImageError, JobError, WeightsError
from .evgf import PATHWAY_CODES, feature_bytes, parse_evgf, read_evgf, write_evgf
from .image_io import load_image
from .job import RESAMPLE_POLICIES, ExportJob, export_features
from .resample import fit_channels, partition_grid, pool_tokens

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_PATHWAYS",
    "CompatResult",
    "EvgfError",
    "ExportJob",
    "ExporterError",
    "ImageError",
    "JobError",
    "PATHWAY_CODES",
    "RESAMPLE_POLICIES",
    "WeightsError",
    "export_features",
    "feature_bytes",
    "fit_channels",
    "load_image",
    "parse_evgf",
    "partition_grid",
    "pool_tokens",
    "read_evgf",
    "verify_compat",
    "write_evgf",
    "__version__",
]
