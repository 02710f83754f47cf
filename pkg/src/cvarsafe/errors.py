"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class ModelValidationError(ValueError):
    """A model violates one of its structural invariants."""


class ConfigError(ValueError):
    """A config document fails schema or semantic validation.

    `field` carries the path of the offending entry, e.g.
    "disturbance.atoms[2].prob".
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InternalConsistencyError(RuntimeError):
    """A numerical invariant that should hold by construction was violated.

    Signals an interpolation or model bug rather than bad user input.
    """


class ArtifactError(RuntimeError):
    """A persisted artifact is missing or fails its integrity check."""
