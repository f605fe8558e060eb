"""
Exception hierarchy for psygames.

Every error raised on purpose by the library derives from PsyGamesError so the
command-line layer can map it to an exit code in a single place.
"""
from typing import Optional, Tuple


class PsyGamesError(Exception):
    """Base class for all psygames errors."""
    pass


# --- Expressions ---
class ExprSyntaxError(PsyGamesError, ValueError):
    """Raised when an expression cannot be parsed."""

    def __init__(self, message: str, position: int = -1):
        super().__init__(f"{message} (at position {position})" if position >= 0 else message)
        self.position = position


class UnknownVariable(PsyGamesError, KeyError):
    """Raised when an expression names an action that is not declared."""

    def __init__(self, name: str):
        super().__init__(f"Unknown variable '{name}'")
        self.name = name

    def __str__(self):
        return self.args[0]


class NonPolynomial(PsyGamesError, ValueError):
    """Raised when an expression divides by, or exponentiates with, a variable."""
    pass


class MissingAssignment(PsyGamesError, KeyError):
    """Raised when evaluation meets a variable with no assigned value."""

    def __init__(self, var):
        super().__init__(f"No value assigned to {var}")
        self.var = var

    def __str__(self):
        return self.args[0]


# --- Games ---
class ProfileShapeMismatch(PsyGamesError, ValueError):
    """Raised when a strategy profile does not match a game's players and actions."""
    pass


class PivotNotInSupport(PsyGamesError, ValueError):
    """Raised when a pivot action is not part of the support it anchors."""
    pass


class NoEquilibriumFound(PsyGamesError):
    """Raised when no support yields a verified equilibrium."""

    def __init__(self, message: str, inconclusive: int = 0, where: Optional[Tuple[int, object]] = None):
        if where is not None:
            message = f"{message} at t={where[0]}, state={where[1]}"
        super().__init__(message)
        self.inconclusive = inconclusive
        self.where = where


class TooLarge(PsyGamesError):
    """Raised when a brute-force grid would exceed its size limit."""
    pass


class MissingContinuation(PsyGamesError, KeyError):
    """Raised when a stage game needs a continuation value that was not supplied."""

    def __init__(self, state):
        super().__init__(f"No continuation value for state {state}")
        self.state = state

    def __str__(self):
        return self.args[0]


class UnreachableState(PsyGamesError, KeyError):
    """Raised when a value is requested for a state the process cannot occupy at that time."""

    def __init__(self, t: int, state):
        super().__init__(f"State {state} is not reachable with {t} steps remaining")
        self.t = t
        self.state = state

    def __str__(self):
        return self.args[0]


# --- Models ---
class ModelSyntaxError(PsyGamesError, ValueError):
    """Raised when a model source does not follow the modelling-language grammar."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class UnknownIdentifier(PsyGamesError, ValueError):
    """Raised when a model refers to something that is neither a constant, variable nor action."""
    pass


class DuplicateAction(PsyGamesError, ValueError):
    """Raised when an action name is declared twice."""
    pass


class DuplicateOrMissingPlayers(PsyGamesError, ValueError):
    """Raised when a model declares no players or the same player twice."""
    pass


class RangeError(PsyGamesError, ValueError):
    """Raised for empty variable ranges or values leaving their declared range."""
    pass


class UnboundConstant(PsyGamesError, KeyError):
    """Raised when elaboration meets a constant without a value."""

    def __init__(self, name: str):
        super().__init__(f"Constant '{name}' has no value; bind it with -c {name}=VALUE")
        self.name = name

    def __str__(self):
        return self.args[0]


class NonPolynomialAfterSubstitution(PsyGamesError, ValueError):
    """Raised when an expression stays non-polynomial after constants are bound."""
    pass


class UnknownModel(PsyGamesError, KeyError):
    """Raised when a model name is neither bundled nor an existing file."""

    def __init__(self, name: str):
        super().__init__(f"Unknown model '{name}'")
        self.name = name

    def __str__(self):
        return self.args[0]


class ResultsIoError(PsyGamesError, OSError):
    """Raised when result records cannot be written or read."""
    pass


class InvalidModel(PsyGamesError, ValueError):
    """Raised when a model is well-formed text but describes an invalid game."""
    pass
