"""
Exception hierarchy for sbite.

Input validation keeps raising ``ValueError`` subclasses so callers that
already catch ``ValueError`` keep working.
"""


class SBITEError(Exception):
    """Base class for all sbite errors."""


class DomainError(SBITEError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(SBITEError, ValueError):
    """Experiment or command-line configuration is invalid."""


class NumericalError(SBITEError, ArithmeticError):
    """A numerical procedure failed (singular system, bracketing failure, ...)."""
