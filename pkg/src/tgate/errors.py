"""Exception hierarchy for the gate simulator."""


class TgateError(Exception):
    """Base class for all package-specific failures."""


class CutoffTooSmallError(TgateError):
    """Requested state has non-negligible weight above the Fock cutoff."""


class IntegrationError(TgateError):
    """Propagator failed to converge (step-size underflow)."""

    def __init__(self, message, t=None, step=None, shot=None):
        super().__init__(message)
        self.t = t
        self.step = step
        self.shot = shot


class VoltageClampError(TgateError):
    """A waveform operation produced a frame outside +/-12 V."""


class InfeasibleKeyframeError(TgateError):
    """Keyframe solve hit the voltage clamp and cannot meet the target well."""


class TrajectoryError(TgateError):
    """Well lost (non-positive curvature) during trajectory extraction."""

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class ResolutionError(TgateError):
    """Retiming would leave a segment with fewer than 10 samples."""


class CalibrationError(TgateError):
    """A closed-loop calibration routine failed to converge."""


class RescanRequiredError(CalibrationError):
    """Scan minimum landed on the grid edge; a wider scan is needed."""


class EstimationError(TgateError):
    """A fit underlying a fidelity / spectroscopy estimate failed."""


class NoSolutionError(TgateError):
    """Root finding target is unreachable within the search bracket."""


class ConfigError(TgateError):
    """Experiment configuration is malformed or carries unknown keys."""
