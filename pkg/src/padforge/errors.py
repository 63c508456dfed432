"""Exception types shared across the pipeline stages."""


class PadforgeError(Exception):
    """Base class for all padforge errors."""


class UnsupportedEncodingError(PadforgeError):
    """Image file is not an 8-bit grayscale PNG."""


class InvariantViolationError(PadforgeError):
    """A record or value violates a documented data invariant."""


class ManifestFormatError(PadforgeError):
    """Manifest file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class DegenerateGeometryError(PadforgeError):
    """Pupil/iris circle parameters are unusable (e.g. non-positive radius)."""


class NotEnrolledError(PadforgeError):
    """Template has too few valid bits to take part in matching."""


class InsufficientOverlapError(PadforgeError):
    """No angular shift leaves enough common mask bits to compare two templates."""


class InsufficientSurvivorsError(PadforgeError):
    """Leakage filtering left fewer samples than requested; carries the count."""

    def __init__(self, survivors, k_target):
        super().__init__(
            f"only {survivors} candidates survive leakage filtering, need {k_target}"
        )
        self.survivors = survivors
        self.k_target = k_target


class LeakageVerificationError(PadforgeError):
    """Post-hoc leakage verification found retained/gallery matches."""


class ConfigError(PadforgeError):
    """Pipeline configuration file is missing, malformed, or inconsistent."""
