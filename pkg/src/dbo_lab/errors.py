"""Exception hierarchy shared by every module."""


class DBOError(Exception):
    """Base class for all library errors."""


class ParameterError(DBOError, ValueError):
    pass


class TopologyError(DBOError, ValueError):
    pass


class ValidationError(DBOError, ValueError):
    """A mixing matrix failed one of its structural checks."""

    def __init__(self, prop, message):
        super().__init__(f"{prop}: {message}")
        self.prop = prop


class ShapeError(DBOError, ValueError):
    pass


class ConstructionError(DBOError, ValueError):
    pass


class InitializationError(DBOError, ValueError):
    pass


class InconsistencyError(DBOError, ValueError):
    pass


class ConfigError(DBOError, ValueError):
    """Raised by the config parser; carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class ComparisonError(DBOError, ValueError):
    pass


class AccuracyError(DBOError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


class DivergenceError(DBOError, ArithmeticError):
    """A non-finite value appeared in an agent's direction or iterate."""

    def __init__(self, agent, round, what="direction"):
        super().__init__(f"non-finite {what} at agent {agent}, round {round}")
        self.agent = agent
        self.round = round
