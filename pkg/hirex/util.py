"""Hirex utilities."""

from typing import Iterable
import arrow


def humanize_elapsed(start: arrow.Arrow, /) -> str:
    """Human readable time elapsed since *start*, e.g. ``"2 minutes"``."""
    return start.humanize(arrow.utcnow(), only_distance=True)


def tsv_row(values: Iterable, /) -> str:
    """Tab-separated line of *values*; floats get six decimals, None is blank."""
    cells = []
    for value in values:
        if value is None:
            cells.append("")
        elif isinstance(value, float):
            cells.append(f"{value:.6f}")
        else:
            cells.append(str(value))
    return "\t".join(cells) + "\n"


__all__ = (
    "humanize_elapsed",
    "tsv_row",
)
