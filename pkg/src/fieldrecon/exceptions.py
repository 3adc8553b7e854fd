"""Exception hierarchy.

Numerical failures (exit code 1 in the CLI) derive from ``NumericalError``;
bad input and configuration problems (exit code 2) derive from ``ValueError``.
"""


class FieldReconError(Exception):
    """Base class for all package errors."""


class ConfigError(FieldReconError, ValueError):
    """Invalid configuration, case file or input data."""


class DegenerateElementError(FieldReconError, ValueError):
    """Element or face with a non-positive Jacobian determinant."""


class NumericalError(FieldReconError):
    """A solve or an optimisation could not produce a trustworthy result."""


class SingularSystemError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class SolverBreakdown(NumericalError):
    pass


class OptionErrors(FieldReconError):
    """One or more generation options failed; the others completed.

    ``errors`` maps option index to exception, ``results`` holds the solutions
    (``None`` where the option failed).
    """

    def __init__(self, errors: dict, results: list):
        self.errors = errors
        self.results = results
        detail = "; ".join(f"option {i}: {e}" for i, e in sorted(errors.items()))
        super().__init__(f"{len(errors)} of {len(results)} options failed: {detail}")
