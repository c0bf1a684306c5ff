"""Session types: protocol types ascribed to channel names, with duality.

The two nondeterminism monads are ``MayProvide`` (a session that may be
produced, or fail) and ``MayConsume`` (a session whose availability must be
confirmed before use).  Primitive data types are self-dual.
"""
from __future__ import annotations

from dataclasses import dataclass


class SessionType:
    __slots__ = ()


@dataclass(frozen=True)
class One(SessionType):
    """Session about to be closed from the providing side."""


@dataclass(frozen=True)
class Bot(SessionType):
    """Session about to be closed from the waiting side."""


@dataclass(frozen=True)
class Tensor(SessionType):
    """Send a name of the left type, continue at the right type."""

    left: SessionType
    right: SessionType


@dataclass(frozen=True)
class Parr(SessionType):
    """Receive a name of the left type, continue at the right type."""

    left: SessionType
    right: SessionType


def _norm_choices(choices) -> tuple[tuple[str, SessionType], ...]:
    items = tuple(sorted(dict(choices).items()))
    if not items:
        raise ValueError("labelled type needs at least one label")
    if len(items) != len({lbl for lbl, _ in items}):
        raise ValueError("duplicate label in labelled type")
    return items


@dataclass(frozen=True)
class Select(SessionType):
    """Internal labelled choice: the owner picks one label."""

    choices: tuple[tuple[str, SessionType], ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", _norm_choices(self.choices))

    def branch(self, label: str) -> SessionType:
        return dict(self.choices)[label]

    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.choices)


@dataclass(frozen=True)
class Offer(SessionType):
    """External labelled choice: the owner offers every label."""

    choices: tuple[tuple[str, SessionType], ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", _norm_choices(self.choices))

    def branch(self, label: str) -> SessionType:
        return dict(self.choices)[label]

    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.choices)


@dataclass(frozen=True)
class MayProvide(SessionType):
    """A session of the inner type that may be provided, or fail."""

    inner: SessionType


@dataclass(frozen=True)
class MayConsume(SessionType):
    """A session of the inner type whose availability must be confirmed."""

    inner: SessionType


@dataclass(frozen=True)
class Prim(SessionType):
    """Self-dual primitive data type, written ``#Name`` in source."""

    name: str


UNIT = One()
BOTTOM = Bot()


def dual(t: SessionType) -> SessionType:
    """The other endpoint's view of the protocol.  Involutive."""
    if isinstance(t, One):
        return BOTTOM
    if isinstance(t, Bot):
        return UNIT
    if isinstance(t, Tensor):
        return Parr(dual(t.left), dual(t.right))
    if isinstance(t, Parr):
        return Tensor(dual(t.left), dual(t.right))
    if isinstance(t, Select):
        return Offer(tuple((lbl, dual(a)) for lbl, a in t.choices))
    if isinstance(t, Offer):
        return Select(tuple((lbl, dual(a)) for lbl, a in t.choices))
    if isinstance(t, MayProvide):
        return MayConsume(dual(t.inner))
    if isinstance(t, MayConsume):
        return MayProvide(dual(t.inner))
    if isinstance(t, Prim):
        return t
    raise TypeError(f"not a session type: {t!r}")


def type_to_str(t: SessionType) -> str:
    """Render in the concrete syntax accepted by the parser."""
    if isinstance(t, One):
        return "1"
    if isinstance(t, Bot):
        return "bot"
    if isinstance(t, Tensor):
        return f"{_atom(t.left)} * {type_to_str(t.right)}"
    if isinstance(t, Parr):
        return f"{_parr_atom(t.left)} % {type_to_str(t.right)}"
    if isinstance(t, Select):
        inner = ", ".join(f"{lbl}: {type_to_str(a)}" for lbl, a in t.choices)
        return "+{" + inner + "}"
    if isinstance(t, Offer):
        inner = ", ".join(f"{lbl}: {type_to_str(a)}" for lbl, a in t.choices)
        return "&{" + inner + "}"
    if isinstance(t, MayProvide):
        return f"&? {_atom(t.inner)}"
    if isinstance(t, MayConsume):
        return f"+? {_atom(t.inner)}"
    if isinstance(t, Prim):
        return f"#{t.name}"
    raise TypeError(f"not a session type: {t!r}")


def _atom(t: SessionType) -> str:
    # operands of * and the monads parenthesize anything binary
    if isinstance(t, (Tensor, Parr)):
        return f"({type_to_str(t)})"
    return type_to_str(t)


def _parr_atom(t: SessionType) -> str:
    # * binds tighter than %, so a Tensor may appear bare on the left of %
    if isinstance(t, Parr):
        return f"({type_to_str(t)})"
    return type_to_str(t)
