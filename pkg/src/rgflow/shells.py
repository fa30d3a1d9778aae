"""Distance shells around a lattice site.

Shell ``k`` groups the sites at one squared distance from a center. Shells
1-6 are the groups used by the basis functions; 7-10 are needed so that the
relabelled images of the even shells stay inside the table.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .errors import ConfigurationError

__all__ = ["Shell", "SHELLS", "MAX_SHELL", "get_shell", "shell_for_d2", "ALL_OFFSETS"]


@dataclass(frozen=True)
class Shell:
    index: int
    d2: int
    offsets: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return len(self.offsets)

    @property
    def parity(self) -> str:
        return "even" if self.d2 % 2 == 0 else "odd"


def _offsets(d2: int) -> tuple[tuple[int, int], ...]:
    r = int(d2**0.5) + 1
    # fixed order: di ascending, then dj ascending
    return tuple(
        (di, dj) for di, dj in product(range(-r, r + 1), repeat=2) if di * di + dj * dj == d2
    )


_D2 = (0, 1, 2, 4, 5, 8, 9, 10, 13, 16)
SHELLS: dict[int, Shell] = {k: Shell(k, d2, _offsets(d2)) for k, d2 in enumerate(_D2, start=1)}
MAX_SHELL = len(_D2)

# every offset used by any shell, in shell order; handy for neighbour tables
ALL_OFFSETS: tuple[tuple[int, int], ...] = tuple(o for k in SHELLS for o in SHELLS[k].offsets)


def get_shell(k: int) -> Shell:
    try:
        return SHELLS[int(k)]
    except (KeyError, ValueError, TypeError):
        raise ConfigurationError(f"shell index {k!r} outside the supported table 1..{MAX_SHELL}") from None


def shell_for_d2(d2: int) -> Shell | None:
    for s in SHELLS.values():
        if s.d2 == d2:
            return s
    return None
