"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class NholoError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(NholoError):
    """Invalid run configuration. Carries optional line/column diagnostics."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class ExpressionError(ConfigError):
    """Malformed field expression."""


class DomainError(NholoError):
    pass


class OrderError(NholoError):
    pass


class QuadratureError(NholoError):
    pass


class SingularMetricError(NholoError):
    pass


class SingularError(NholoError):
    pass


class PsiResidualError(NholoError):
    pass


class DivisionError(NholoError):
    pass


class GeneratorDegeneracyError(NholoError):
    pass


class AnsatzShapeError(NholoError):
    pass


class BranchError(NholoError):
    pass


class CompatibilityError(NholoError):
    pass


class RadicandSignError(NholoError):
    pass


class DegenerateHessianError(NholoError):
    pass


class IntegrationError(NholoError):
    pass


class DegenerationError(NholoError):
    pass


class StabilityError(NholoError):
    pass


class TruncationOverflow(NholoError):
    pass
