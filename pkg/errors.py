"""
Exception hierarchy for the edge analytics toolkit.

Every failure raised by the library derives from EdgeAnalyticsError so the
command line can map whole families onto exit codes.
"""


class EdgeAnalyticsError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EdgeAnalyticsError, ValueError):
    """Malformed configuration or scenario file.

    Args:
        message: human readable diagnostic
        key: dotted name of the offending key, when known
    """

    def __init__(self, message, key=None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class ModelFormatError(EdgeAnalyticsError, ValueError):
    """A stored model or report document failed validation."""


# --- packet-io ---------------------------------------------------------------

class PcapError(EdgeAnalyticsError, ValueError):
    pass


class BadMagic(PcapError):
    pass


class UnsupportedFormat(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class TruncatedFrame(PcapError):
    pass


class NonIPv4Frame(PcapError):
    pass


class FragmentedPacket(PcapError):
    pass


class BadIHL(PcapError):
    pass


class UnencodableRecord(PcapError):
    pass


# --- features ----------------------------------------------------------------

class FeatureError(EdgeAnalyticsError, ValueError):
    pass


class NoDeviceTraffic(FeatureError):
    pass


class SchemaMismatch(FeatureError):
    pass


class UnparseableNumber(FeatureError):
    pass


# --- models ------------------------------------------------------------------

class ModelError(EdgeAnalyticsError):
    """Training or fitting failed."""


class EmptyMatrix(ModelError, ValueError):
    pass


class EmptyData(ModelError, ValueError):
    pass


class LengthMismatch(ModelError, ValueError):
    pass


class ClassTooSmall(ModelError, ValueError):
    pass


class SingleClassData(ModelError, ValueError):
    pass


class DegenerateData(ModelError, ValueError):
    pass


class DegenerateGram(ModelError, ValueError):
    pass


class NotPositiveDefinite(ModelError, ValueError):
    pass


class SingularCovariance(ModelError, ValueError):
    pass


class TooFewSamples(ModelError, ValueError):
    pass


class ContaminatedTrainingSet(ModelError, ValueError):
    pass


class NonConvergence(ModelError, RuntimeError):
    pass


# --- pipeline ----------------------------------------------------------------

class PipelineError(EdgeAnalyticsError):
    pass


class NoSuspect(PipelineError, ValueError):
    pass
