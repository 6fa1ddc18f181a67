"""Exception types shared across the package.

Kept deliberately small: configuration problems and numerical failures are
the only conditions the command-line harness maps to distinct exit codes.
"""


class ZvonkinError(Exception):
    """Base class for package errors."""


class ConfigError(ZvonkinError):
    """Invalid or inconsistent configuration / preconditions on inputs."""


class NumericalError(ZvonkinError):
    """A numerical procedure failed: solver stall, Newton divergence,
    degenerate estimate, path escape beyond tolerance."""
