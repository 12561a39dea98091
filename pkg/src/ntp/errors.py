"""Exception taxonomy shared by every module.

All tool errors derive from NtpError so the CLI can map them onto its
stable exit codes (1 I/O, 2 validation, 3 runtime).
"""


class NtpError(Exception):
    """Base class for every error raised by this package."""


# --- validation-stage errors (CLI exit code 2) ---------------------------

class ValidationError(NtpError):
    """Input document or argument is structurally or semantically invalid."""


class XmlSyntaxError(ValidationError):
    """Malformed XML. Carries the 1-based source line when known."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class SchemaError(ValidationError):
    """Well-formed XML that does not fit the topology schema."""


class UnknownKind(ValidationError):
    pass


class DanglingReference(ValidationError):
    pass


class CycleError(ValidationError):
    pass


class MarkerError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class PrecisionUnsupported(ValidationError):
    pass


class InconsistentInputs(ValidationError):
    pass


class AxisMismatch(ValidationError):
    pass


class UnalignableRows(ValidationError):
    pass


class UnknownParam(ValidationError):
    pass


class EmptySamples(ValidationError):
    pass


class DivisionDomain(ValidationError):
    pass


# --- weight-container errors ---------------------------------------------

class WeightContainerError(NtpError):
    pass


class MissingTensor(WeightContainerError):
    pass


class UnexpectedTensor(WeightContainerError):
    pass


class ShapeMismatch(WeightContainerError):
    """Tensor exists but its shape/precision disagrees with the model.

    Also raised by engine kernels on malformed operand shapes.
    """


class ChecksumMismatch(WeightContainerError):
    pass


# --- runtime errors (CLI exit code 3) -------------------------------------

class RuntimeFailure(NtpError):
    pass


class CollectorError(RuntimeFailure):
    pass


class ContractViolation(CollectorError):
    """Collector lifecycle call arrived in an illegal state."""


class ClockResolution(RuntimeFailure):
    """Calibration workload too short for the available timer."""
