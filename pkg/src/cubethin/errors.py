"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`CubeThinError`, so callers can catch the whole family at once.
Most also subclass :class:`ValueError` because they report bad inputs.
"""


class CubeThinError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CubeThinError, ValueError):
    pass


class RankDeficient(CubeThinError, ValueError):
    """Design or constraint matrix lost rank (redundant control variates)."""


class MissingScores(CubeThinError, ValueError):
    """An operation needs score vectors the chain does not carry."""


class Infeasible(CubeThinError, ValueError):
    pass


class Unbounded(CubeThinError, ValueError):
    pass


class NoDirection(CubeThinError):
    """No admissible flight direction exists; the flight phase is over.

    This is a termination signal, not a failure.
    """


class TooManyResidual(CubeThinError, ValueError):
    """Too many non-integral coordinates left for the landing program."""


class DegenerateWeights(CubeThinError, ValueError):
    pass


class InvalidRange(CubeThinError, ValueError):
    pass


class DegenerateSample(CubeThinError, ValueError):
    pass


class ZeroMass(CubeThinError, ValueError):
    """A signed measure has zero total mass, so normalising is undefined."""


class ParseError(CubeThinError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DimensionError(ParseError):
    """Ragged row in a chain file."""
