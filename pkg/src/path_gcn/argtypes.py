# MIT License
"""
Provides helper functions and types to process and convert some command line
arguments.

Includes some argument type conversion helper classes:
- `IntArg(arg)`: Convert a string to an integer count, with an optional `k` or
  `M` suffix (`"10k"` -> 10000).
- `IntList(arg)`: Split a comma separated string into a list of `IntArg`s.
- `ArgList(arg)`: Split a string into a list of lists of strings, eg. the
  `NAME=VALUE` overrides given to `--set`.
"""

from __future__ import annotations

import re
from typing import Dict, List  # Need List for py3.8

K = 1_000  # Counts are decimal: 10k paths is 10000 paths
M = 1_000_000

# Convert suffixes to multipliers for convenient counts.
COUNT_UNITS = {"M": M, "K": K}

# Delimiters for splitting up and stripping values of command arguments
# First level split is on "," and then on "=" or ":"
DELIMITERS = [r"\s*,\s*", r"\s*[=:]\s*"]

# Counts may be written as reals if they are whole numbers, eg. "1e4" or "2.5k"
FLOAT_FORM = r"\s*[-+]?[0-9.]+[eE][-+]?[0-9]+\s*|\s*[-+]?[0-9]*\.[0-9]*\s*"


class IntArg(int):
    """Convert a string to an integer count.
    The string may contain a decimal or hex number and an optional unit suffix:
    "k"=thousand or "M"=million.

    Eg: `"10k"` (10000 paths), `"1M"`, `"0x10"` (16), `"1e4"` (10000).
    """

    def __new__(cls, arg: str) -> IntArg:
        if not arg:
            arg = "0"
        unit = 1
        for k, v in COUNT_UNITS.items():
            if arg.upper().endswith(k):
                arg, unit = arg[: -len(k)], v
                break
        if re.fullmatch(FLOAT_FORM, arg):
            value = float(arg) * unit
            if value != int(value):
                raise ValueError(f"Not a whole number: '{arg}'")
            return super().__new__(cls, int(value))
        return super().__new__(cls, int(arg, 0) * unit)


class IntList(List[int]):
    """Split a comma separated string of counts into a list of ints.
    eg: `"10,100,1k,10k"` -> `[10, 100, 1000, 10000]`
    """

    def __init__(self, arg: str) -> None:
        super().__init__(IntArg(s) for s in re.split(DELIMITERS[0], arg.strip()) if s)

    def __str__(self) -> str:
        return ",".join(str(i) for i in self)


class ArgList(List[List[str]]):
    """Split command line arguments into a list of list of strings.
    The string is delimited first by "," and then by "=", ":"
    eg: `"k=5,lr_gcn=1e-3"` -> `[["k", "5"], ["lr_gcn", "1e-3"]]`
    """

    def __init__(self, arg: str) -> None:
        super().__init__(
            [re.split(DELIMITERS[1], s) for s in re.split(DELIMITERS[0], arg.strip())]
        )

    def __str__(self) -> str:
        """Reconstruct the argument list as a string."""
        return ",".join("=".join(str(s) for s in x if s) for x in self)

    def as_dict(self) -> Dict[str, str]:
        """Return the `NAME=VALUE` pairs as a dict. Raises `ValueError` on a
        malformed pair."""
        pairs: Dict[str, str] = {}
        for item in self:
            if len(item) != 2 or not item[0]:
                raise ValueError(f"Expected NAME=VALUE, got '{'='.join(item)}'")
            pairs[item[0]] = item[1]
        return pairs
