"""Intersection types for the resource lambda calculus.

Strict types classify terms; multiset types classify bags.  Multisets are
non-idempotent: a bag of k resources of one strict type has that type at
multiplicity k, and the empty multiset is written ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class StrictType:
    __slots__ = ()


@dataclass(frozen=True)
class UnitT(StrictType):
    pass


@dataclass(frozen=True)
class OkT(StrictType):
    """Type of the success marker."""


@dataclass(frozen=True)
class Arrow(StrictType):
    dom: "MultisetType"
    cod: StrictType


@dataclass(frozen=True)
class MultisetType:
    """base repeated count times; count 0 is the empty multiset and carries
    no base."""

    base: Optional[StrictType]
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("negative multiplicity")
        if self.count == 0 and self.base is not None:
            object.__setattr__(self, "base", None)
        if self.count > 0 and self.base is None:
            raise ValueError("positive multiplicity needs a base type")

    def is_empty(self) -> bool:
        return self.count == 0


OMEGA = MultisetType(None, 0)


def multi(base: StrictType, count: int) -> MultisetType:
    return MultisetType(base if count > 0 else None, count)


def strict_to_str(t: StrictType) -> str:
    if isinstance(t, UnitT):
        return "unit"
    if isinstance(t, OkT):
        return "ok"
    if isinstance(t, Arrow):
        return f"{multi_to_str(t.dom)} -> {strict_to_str(t.cod)}"
    raise TypeError(f"not a strict type: {t!r}")


def multi_to_str(pi: MultisetType) -> str:
    if pi.is_empty():
        return "w"
    base = strict_to_str(pi.base)
    if isinstance(pi.base, Arrow):
        base = f"({base})"
    return f"{base}^{pi.count}"
