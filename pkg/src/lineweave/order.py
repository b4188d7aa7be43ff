"""Dense, totally ordered line keys.

A key is a path of Fractions. A line inserted after anchor A gets the key
``A.key + (slot,)``, i.e. it becomes a child of its anchor; plain tuple
comparison then yields document order (a parent sorts immediately before
its descendants, and sibling slots order the subtrees). Fractions make
every sibling gap infinitely divisible, so between any two keys a third
can always be generated.
"""

from __future__ import annotations

from fractions import Fraction

from .model import OrderKey

TOP: OrderKey = ()


def slot_between(left: Fraction | None, right: Fraction | None) -> Fraction:
    """A sibling slot strictly between two neighbours (None = open end)."""
    if left is not None and right is not None:
        if left >= right:
            raise ValueError(f"slots out of order: {left} >= {right}")
        return (left + right) / 2
    if left is not None:
        return left + 1
    if right is not None:
        return right - 1
    return Fraction(0)


def child_key(parent: OrderKey, slot: Fraction) -> OrderKey:
    return parent + (slot,)


def is_child(key: OrderKey, parent: OrderKey) -> bool:
    return len(key) == len(parent) + 1 and key[: len(parent)] == parent


def key_to_wire(key: OrderKey) -> list[str]:
    return [str(f) for f in key]


def key_from_wire(parts: list[str]) -> OrderKey:
    return tuple(Fraction(p) for p in parts)
