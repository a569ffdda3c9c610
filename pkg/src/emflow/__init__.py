"""Charged-particle worldlines, electromagnetic flows and their variational descriptions."""

from .errors import (
    CausalityError,
    ChartDomainError,
    ConfigurationError,
    EmflowError,
    IntegrationError,
    NotConnectedError,
    NotLFESolutionError,
    ShootError,
    StuckError,
)

__version__ = "0.1.0"
