"""Error taxonomy shared across the library and the CLI exit-code contract.

``InputError`` covers violations detectable from the arguments or input records
alone (bad parameter ranges, malformed rows, impossible prefix configurations).
``DegenerateError`` covers data- or numerics-driven failure in an otherwise
valid call (constant samples where a spread is required, all-zero estimators,
diverged training). The CLI maps them to exit codes 2 and 3 respectively.
"""

from __future__ import annotations


class InputError(ValueError):
    """Invalid argument or input record."""


class DegenerateError(ValueError):
    """Computation is degenerate for this data (valid call, no usable result)."""
