class AssumptionViolation(ValueError):
    """Input data break one of the standing assumptions on the model."""


class SolverError(RuntimeError):
    """A linear solve failed to reach its residual target."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``errors`` holds one message per offending field.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
