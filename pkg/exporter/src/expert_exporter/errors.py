"""Error taxonomy for the exporter, mapped onto CLI exit codes.

JobError -> 2 (bad flags or job description), WeightsError -> 3 (backend
weights missing or unloadable), ImageError -> 4 (input missing or
undecodable), EvgfError -> 4 (malformed feature data). Every message
names the offending path or value so batch logs are actionable.
"""


class ExporterError(Exception):
    """Base class for all exporter failures."""


class JobError(ExporterError):
    """Invalid job description: pathway, sizes, policy, backend, or flags."""


class ImageError(ExporterError):
    """Input image missing or undecodable; the message names the path."""


class WeightsError(ExporterError):
    """Backend weights missing or unloadable; the message names the path."""


class EvgfError(ExporterError):
    """Feature file malformed; the message includes the byte offset."""
