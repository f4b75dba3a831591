"""Exception hierarchy shared across the steering stack."""


class SteeringError(Exception):
    """Base class for every error raised by this package."""


# --- configuration parsing ---

class ConfigSyntaxError(SteeringError):
    """The configuration document is not well-formed JSON."""


class ConfigSchemaError(SteeringError):
    """A required field is missing or has the wrong shape for its tag kind."""


class ConfigReferenceError(SteeringError):
    """A relation names an undeclared tag or a tag of the wrong kind."""


class ConfigDuplicateError(SteeringError):
    """A tag name or relation pair is declared twice."""


class KindError(SteeringError):
    """Operation called on a tag of the wrong kind (e.g. dynamic bounds on a non-control tag)."""


class UnknownTagError(SteeringError):
    """A value references a tag the configuration does not declare."""


# --- streaming bus ---

class BusClosedError(SteeringError):
    """Publish or subscribe attempted on a bus that has been shut down."""


# --- data checks / dataset assembly ---

class InsufficientDataError(SteeringError):
    """Not enough finite samples to fit or evaluate."""


class GapError(SteeringError):
    """Frames handed to a windowed operation are not contiguous on the grid."""


# --- predictor ---

class SingularError(SteeringError):
    """Unregularized normal equations are rank-deficient."""


class NonFiniteError(SteeringError):
    """NaN or infinity encountered where a finite value is required."""


class FingerprintMismatchError(SteeringError):
    """Model feature ordering does not match the active configuration."""


class UnstableWindowError(SteeringError):
    """Inference requested on a window flagged unstable."""


# --- optimizer ---

class EmptyCandidateSetError(SteeringError):
    """No admissible control candidates to score."""


class MissingPredictionError(SteeringError):
    """Objective references a tag absent from the prediction map."""


# --- safeguard routing ---

class NoRelationError(SteeringError):
    """A triggering constraint tag has no declared related control tag."""


class ModeMismatchError(SteeringError):
    """Arbitration received prescriptions inconsistent with the decided mode."""


# --- validation harness ---

class AlignmentError(SteeringError):
    """Prescriptions and frames are not time-aligned."""


class SpanOverlapError(SteeringError):
    """Holdout data overlaps the model's training span."""


# --- steering service ---

class UnknownIdError(SteeringError):
    """Decision submitted for a prescription id that was never issued."""


class StaleIdError(SteeringError):
    """Decision submitted for a prescription already decided or expired."""


class ModeError(SteeringError):
    """Operation not valid in the service's current steering mode."""
