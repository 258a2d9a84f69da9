"""Exception hierarchy shared across the package.

Every error carries a short machine-parseable ``category`` so the CLI can
emit a single diagnostic line without reverse-engineering exception types.
"""


class VarlensError(Exception):
    """Base class for errors raised by this package."""

    category = "runtime-error"


class InvalidArgument(VarlensError, ValueError):
    """A caller violated a documented precondition."""

    category = "invalid-argument"


class FormatError(VarlensError):
    """A file or byte stream does not match its declared format."""

    category = "format-error"


class UnsupportedVersion(FormatError):
    """A persisted artifact declares a format version we cannot read."""

    category = "unsupported-version"


class ConfigError(VarlensError):
    """A configuration file or option set is malformed or inconsistent."""

    category = "config-error"


class SamplingError(VarlensError):
    """A sampler cannot satisfy its contract (e.g. no eligible negative)."""

    category = "sampling-error"


class PairShortage(SamplingError):
    """An evaluation asked for more pairs than the corpus can supply.

    The message names the evaluation mode so sweep scripts can tell which
    budget to shrink.
    """

    category = "pair-shortage"


class NotComparable(VarlensError):
    """Two datasets cannot be scored by the requested method."""

    category = "not-comparable"


class TrainingDiverged(VarlensError):
    """A training step produced a non-finite loss."""

    category = "training-diverged"
