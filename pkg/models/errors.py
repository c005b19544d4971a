from typing import Optional


class CertifierError(Exception):
    """Base class for every error raised by the certifier"""


class DomainError(CertifierError, ValueError):
    """A parameter lies outside the range a formula is defined on"""


class ReducibleChain(CertifierError, ValueError):
    """The transition matrix does not connect every pair of states"""


class TooLarge(CertifierError, ValueError):
    """Exhaustive enumeration would exceed the configured size cap"""


class SizeOverflow(CertifierError, ValueError):
    """A generated state space exceeds the configured size cap"""


class ParseError(CertifierError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(CertifierError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{message}: {key}" if key else message)


class NumericalFailure(CertifierError, ArithmeticError):
    """A numerical routine did not meet its accuracy contract"""


class GapExhausted(NumericalFailure):
    """The spectral gap (or contraction rate) is numerically zero"""


class DegenerateChord(NumericalFailure):
    """The chord through the current point is shorter than eps0"""


class NonConvergent(NumericalFailure):
    """Grid refinement did not stabilise"""
