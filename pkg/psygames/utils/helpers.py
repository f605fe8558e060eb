import itertools
import os
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

# Significant digits used for every number written to a report.
SIGNIFICANT_DIGITS = 12


def get_env_variable(key: str, default: Optional[Any] = None) -> Any:
    """
    Retrieves an environment variable by its key.

    Args:
        key (str): The name of the environment variable to retrieve.
        default (Optional[Any]): The value returned when the variable is not set.

    Returns:
        Any: The value of the environment variable, or ``default``.
    """
    return os.getenv(key, default)


def parse_rational(text: str) -> Fraction:
    """
    Parse ``'3'``, ``'0.25'`` or ``'1/3'`` exactly.

    Raises:
        ValueError: If the text is not a rational number.
    """
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"'{text}' is not a number") from None


def split_assignment(text: str) -> Tuple[str, str]:
    name, sep, value = text.partition('=')
    if not sep or not name.strip():
        raise ValueError(f"Expected name=value, got '{text}'")
    return name.strip(), value.strip()


def parse_binding(text: str) -> Tuple[str, Fraction]:
    """
    Parse a ``name=value`` constant binding.

    Raises:
        ValueError: If the text has no ``=`` or the value is not a number.
    """
    name, value = split_assignment(text)
    return name, parse_rational(value)


def parse_sweep(text: str) -> Tuple[str, List[Fraction]]:
    """
    Parse ``name=lo:hi:step`` into the grid lo, lo+step, ..., up to hi.

    The grid is computed in exact arithmetic so that ``0:1:0.25`` ends at
    exactly 1. ``lo == hi`` gives a single point.

    Raises:
        ValueError: If the text is malformed, ``lo > hi`` or ``step <= 0``.
    """
    name, bounds = split_assignment(text)
    parts = bounds.split(':')
    if len(parts) != 3:
        raise ValueError(f"Expected {name}=lo:hi:step, got '{text}'")
    lo, hi, step = (parse_rational(p) for p in parts)
    if lo > hi:
        raise ValueError(f"Sweep '{name}' has lo > hi")
    if step <= 0:
        raise ValueError(f"Sweep '{name}' needs a positive step")
    values = []
    current = lo
    while current <= hi:
        values.append(current)
        current += step
    return name, values


def sweep_grid(sweeps: Sequence[Tuple[str, Sequence[Fraction]]]) -> List[Dict[str, Fraction]]:
    """Cartesian product of sweep axes; the first axis varies slowest."""
    names = [name for name, _ in sweeps]
    if len(set(names)) != len(names):
        raise ValueError("A parameter is swept more than once")
    return [dict(zip(names, point)) for point in itertools.product(*(values for _, values in sweeps))]


def parse_profile(entries: Iterable[str]) -> Dict[str, Fraction]:
    """
    Parse ``player.action=prob`` (or ``action=prob``) entries into an
    action -> probability mapping.

    Raises:
        ValueError: On malformed entries or repeated actions.
    """
    probs: Dict[str, Fraction] = {}
    for entry in entries:
        key, value = split_assignment(entry)
        action = key.rsplit('.', 1)[-1]
        if action in probs:
            raise ValueError(f"Action '{action}' is given twice")
        probs[action] = parse_rational(value)
    return probs


def format_number(value: Any) -> str:
    """Render a number with 12 significant digits, never as ``-0``."""
    text = format(float(value), f".{SIGNIFICANT_DIGITS}g")
    return '0' if text == '-0' else text
