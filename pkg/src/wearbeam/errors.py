"""Exception hierarchy shared by all wearbeam modules."""


class WearbeamError(Exception):
    """Base class for every error raised by the package."""


class ManifestError(WearbeamError):
    """Malformed or inconsistent manifest document."""


class MissingAudioError(ManifestError):
    """A manifest entry points at an audio file that does not exist."""


class ChecksumMismatchError(WearbeamError):
    """A file's SHA-256 digest differs from the declared one."""

    def __init__(self, path, expected, actual):
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
        self.path = path
        self.expected = expected
        self.actual = actual


class KeyValidationError(WearbeamError, ValueError):
    """A MeasurementKey has an invalid field (e.g. off-grid azimuth)."""


class KeyNotFoundError(WearbeamError, KeyError):
    """A well-formed MeasurementKey that the manifest does not contain."""


class AudioDecodeError(WearbeamError):
    """Audio file could not be decoded."""


class NetworkError(WearbeamError):
    """Download failed for transport reasons."""


class SelectionError(WearbeamError, ValueError):
    """Invalid microphone selection (unknown or duplicated ids)."""


class SweepError(WearbeamError, ValueError):
    """Invalid sweep parameters or incompatible recording."""


class AnalysisError(WearbeamError, ValueError):
    """Inputs to a transfer-function analysis are inconsistent."""


class STFTConfigError(WearbeamError, ValueError):
    """STFT configuration without perfect reconstruction."""


class SingularCovarianceError(WearbeamError, ValueError):
    """Noise covariance is not positive definite at one or more bins."""

    def __init__(self, bins):
        self.bins = tuple(int(b) for b in bins)
        shown = ", ".join(str(b) for b in self.bins[:10])
        more = "..." if len(self.bins) > 10 else ""
        super().__init__(
            f"covariance not positive definite at bins [{shown}{more}]; apply diagonal loading"
        )


class SimulationError(WearbeamError, ValueError):
    """Trial configuration or inputs cannot produce a valid experiment."""
