"""Exception hierarchy shared by all modules."""


class RegPredError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(RegPredError, ValueError):
    pass


class DataValidationError(InvalidArgumentError):
    """Malformed input data; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericOverflowError(RegPredError, FloatingPointError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class RankDeficiencyError(RegPredError):
    pass


class NotPositiveDefiniteError(RegPredError):
    def __init__(self, message, pivot=None):
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message)
        self.pivot = pivot


class DivergenceError(RegPredError, FloatingPointError):
    """An online update produced a non-finite value.

    ``component`` names the offending quantity (``"a"``, ``"n"``, ``"sigma"``,
    ``"err_mean"``, ``"err_cov"`` or ``"path"``); ``layer`` and ``step`` locate
    it when the caller knows them.
    """

    def __init__(self, component, step=None, layer=None):
        self.component = component
        self.step = step
        self.layer = layer
        super().__init__(self._describe())

    def _describe(self):
        where = []
        if self.layer is not None:
            where.append(f"layer {self.layer}")
        if self.step is not None:
            where.append(f"step {self.step}")
        loc = f" at {', '.join(where)}" if where else ""
        return f"non-finite value in {self.component}{loc}"

    def located(self, step=None, layer=None):
        """Return a copy carrying additional location info."""
        return DivergenceError(
            self.component,
            step=self.step if step is None else step,
            layer=self.layer if layer is None else layer,
        )


class ForecastFailedError(RegPredError):
    pass
