"""
Exception hierarchy. Library code raises these; only the CLI turns them into exit codes.
"""


class LaeSimError(Exception):
    """Base class for every error the simulator raises on purpose."""


class ScenarioParseError(LaeSimError):
    """Scenario file is not valid JSON or has the wrong shape."""


class ScenarioValidationError(LaeSimError):
    """A scenario record violates one of its invariants. The message names the invariant."""


class SchemaVersionError(LaeSimError):
    """Scenario or model file declares a schema version this build does not know."""


class OutOfBoundsError(LaeSimError):
    """A point query fell outside the world grid extent."""


class PlacementError(LaeSimError):
    """Agents could not be placed in the start zone within the retry budget."""


class ShapeMismatchError(LaeSimError):
    """Vector or parameter shapes do not line up."""


class StaleCacheError(LaeSimError):
    """A forward cache was used with a network that has changed since the forward pass."""


class NonFiniteGradientError(LaeSimError):
    """An optimizer step saw a NaN or infinite gradient."""


class ArchitectureMismatchError(LaeSimError):
    """Two networks that must share an architecture do not."""


class InsufficientBufferError(LaeSimError):
    """The replay buffer holds fewer transitions than a batch needs."""


class EpisodeTerminatedError(LaeSimError):
    """step() was called on an episode that is already over."""


class SchedulingError(LaeSimError):
    """An event was scheduled before the current simulation time."""


class MessageParseError(LaeSimError):
    """A control-plane payload could not be decoded."""


class MessageVersionError(LaeSimError):
    """A control-plane payload carries an unsupported schema version."""


class ModelFileError(LaeSimError):
    """A model file is corrupted or does not match the scenario."""


class MissingModelError(LaeSimError):
    """A learned policy was requested without a trained model."""


class UsageError(LaeSimError):
    """Command-line flags are missing or conflict with each other."""
