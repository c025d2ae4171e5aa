"""Exceptions that map onto the command-line exit codes."""


class ScenarioError(ValueError):
    """A scenario or measure document is malformed or violates its schema."""


class PreconditionError(ValueError):
    """Inputs are well formed but do not satisfy a solver precondition."""
