"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CesMarkdownError(Exception):
    """Base class for package errors."""


class DomainError(CesMarkdownError, ValueError):
    """An input lies outside the domain of a formula (non-positive quantity, non-finite term)."""


class ParameterError(CesMarkdownError, ValueError):
    """A structural parameter is inadmissible (for example ``tau <= 0``)."""


class ConfigurationError(CesMarkdownError, ValueError):
    """A configuration is inconsistent or references something that does not exist."""


class GenerationError(CesMarkdownError, RuntimeError):
    """The synthetic data generator failed (typically a non-converging fixed point)."""


class EstimationError(CesMarkdownError, RuntimeError):
    """An estimator could not produce a result."""


class DiagnosticError(CesMarkdownError, RuntimeError):
    """A numerical diagnostic produced non-finite output."""


class ValidationError(CesMarkdownError, ValueError):
    """Input data failed schema or content validation."""
