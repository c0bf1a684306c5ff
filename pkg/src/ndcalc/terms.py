"""Resource lambda calculus: terms, bags, and nondeterministic reduction.

Bags hold linear resources; an application consumes them by fetching, which
is the source of nondeterminism.  A mismatch between available resources and
variable occurrences collapses a term into explicit failure that records the
dangling free variables.  Sharing atomizes several uses of one variable into
distinct aliases, each used exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .itypes import MultisetType, StrictType


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Bag:
    """Multiset of resource terms; order is kept for printing only."""

    items: tuple[Term, ...] = ()

    def size(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Abs(Term):
    """Abstraction; the body is a sharing on the bound variable, so every
    use of the binder is atomized into aliases."""

    var: str
    body: Term
    ann: Optional[MultisetType] = None


@dataclass(frozen=True)
class App(Term):
    fun: Term
    bag: Bag


@dataclass(frozen=True)
class Sharing(Term):
    """body ⟨aliases ← var⟩: aliases are bound in body, var occurs free."""

    body: Term
    aliases: tuple[str, ...]
    var: str


@dataclass(frozen=True)
class InterSub(Term):
    """Intermediate substitution body⦇bag/var⦈ produced by beta; var bound."""

    body: Term
    bag: Bag
    var: str
    ann: Optional[MultisetType] = None


@dataclass(frozen=True)
class ExplSub(Term):
    """Explicit substitution body⟨⟨bag/aliases⟩⟩; aliases bound in body and
    in one-to-one correspondence with the bag."""

    body: Term
    bag: Bag
    aliases: tuple[str, ...]
    ann: Optional[StrictType] = None


@dataclass(frozen=True)
class Fail(Term):
    """Failure carrying the dangling free variables it absorbed."""

    fvs: frozenset[str] = frozenset()
    ann: Optional[StrictType] = None


@dataclass(frozen=True)
class Okay(Term):
    """Success marker used by the translation correctness criteria."""


def bag(*items: Term) -> Bag:
    return Bag(tuple(items))


# ---------------------------------------------------------------------------
# free variables and occurrence counting


def fv(m: Term) -> frozenset[str]:
    if isinstance(m, Var):
        return frozenset((m.name,))
    if isinstance(m, Abs):
        return fv(m.body) - {m.var}
    if isinstance(m, App):
        return fv(m.fun) | bag_fv(m.bag)
    if isinstance(m, Sharing):
        return (fv(m.body) - set(m.aliases)) | {m.var}
    if isinstance(m, InterSub):
        return (fv(m.body) - {m.var}) | bag_fv(m.bag)
    if isinstance(m, ExplSub):
        return (fv(m.body) - set(m.aliases)) | bag_fv(m.bag)
    if isinstance(m, Fail):
        return m.fvs
    if isinstance(m, Okay):
        return frozenset()
    raise TypeError(f"not a term: {m!r}")


def bag_fv(c: Bag) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for n in c.items:
        out |= fv(n)
    return out


def count_free(m: Term, x: str) -> int:
    """Number of free occurrences of x, counting sharing-variable positions
    and failure sets as occurrences."""
    if isinstance(m, Var):
        return 1 if m.name == x else 0
    if isinstance(m, Abs):
        return 0 if m.var == x else count_free(m.body, x)
    if isinstance(m, App):
        return count_free(m.fun, x) + sum(count_free(n, x) for n in m.bag.items)
    if isinstance(m, Sharing):
        inner = 0 if x in m.aliases else count_free(m.body, x)
        return inner + (1 if m.var == x else 0)
    if isinstance(m, InterSub):
        inner = 0 if m.var == x else count_free(m.body, x)
        return inner + sum(count_free(n, x) for n in m.bag.items)
    if isinstance(m, ExplSub):
        inner = 0 if x in m.aliases else count_free(m.body, x)
        return inner + sum(count_free(n, x) for n in m.bag.items)
    if isinstance(m, Fail):
        return 1 if x in m.fvs else 0
    if isinstance(m, Okay):
        return 0
    raise TypeError(f"not a term: {m!r}")


def _occurs_as_sharing_var(m: Term, x: str) -> bool:
    if isinstance(m, (Var, Fail, Okay)):
        return False
    if isinstance(m, Abs):
        return False if m.var == x else _occurs_as_sharing_var(m.body, x)
    if isinstance(m, App):
        return _occurs_as_sharing_var(m.fun, x) or any(
            _occurs_as_sharing_var(n, x) for n in m.bag.items
        )
    if isinstance(m, Sharing):
        if m.var == x:
            return True
        inner = False if x in m.aliases else _occurs_as_sharing_var(m.body, x)
        return inner
    if isinstance(m, InterSub):
        inner = False if m.var == x else _occurs_as_sharing_var(m.body, x)
        return inner or any(_occurs_as_sharing_var(n, x) for n in m.bag.items)
    if isinstance(m, ExplSub):
        inner = False if x in m.aliases else _occurs_as_sharing_var(m.body, x)
        return inner or any(_occurs_as_sharing_var(n, x) for n in m.bag.items)
    raise TypeError(f"not a term: {m!r}")


def _occurs_in_explsub(m: Term, x: str) -> bool:
    """Does x occur free inside some explicit-substitution subterm of m?"""
    if isinstance(m, (Var, Fail, Okay)):
        return False
    if isinstance(m, Abs):
        return False if m.var == x else _occurs_in_explsub(m.body, x)
    if isinstance(m, App):
        return _occurs_in_explsub(m.fun, x) or any(
            _occurs_in_explsub(n, x) for n in m.bag.items
        )
    if isinstance(m, Sharing):
        return False if x in m.aliases else _occurs_in_explsub(m.body, x)
    if isinstance(m, InterSub):
        inner = False if m.var == x else _occurs_in_explsub(m.body, x)
        return inner or any(_occurs_in_explsub(n, x) for n in m.bag.items)
    if isinstance(m, ExplSub):
        return x in fv(m)
    raise TypeError(f"not a term: {m!r}")


# ---------------------------------------------------------------------------
# syntactic validity


class LamSyntaxError(Exception):
    def __init__(self, message: str, path: tuple[str, ...] = ()):
        self.message = message
        self.path = path
        loc = "/".join(path) if path else "root"
        super().__init__(f"{message} (at {loc})")


def validate(m: Term) -> None:
    """Check the occurrence side conditions on sharing and substitutions."""
    _validate(m, ())


def is_valid(m: Term) -> bool:
    try:
        validate(m)
        return True
    except LamSyntaxError:
        return False


def _validate(m: Term, path: tuple[str, ...]) -> None:
    if isinstance(m, (Var, Fail, Okay)):
        return
    if isinstance(m, Abs):
        if not (isinstance(m.body, Sharing) and m.body.var == m.var):
            raise LamSyntaxError(
                f"abstraction body must share its binder {m.var}", path
            )
        if count_free(m.body.body, m.var) != 0:
            raise LamSyntaxError(
                f"binder {m.var} must occur only through its aliases", path
            )
        _validate(m.body, path + ("abs",))
        return
    if isinstance(m, App):
        _validate(m.fun, path + ("fun",))
        for i, n in enumerate(m.bag.items):
            _validate(n, path + (f"bag[{i}]",))
        return
    if isinstance(m, Sharing):
        if len(set(m.aliases)) != len(m.aliases):
            raise LamSyntaxError("duplicate shared variable", path)
        if m.var in m.aliases:
            raise LamSyntaxError(f"alias equals sharing variable {m.var}", path)
        for a in m.aliases:
            n = count_free(m.body, a)
            if n != 1:
                raise LamSyntaxError(
                    f"shared variable {a} occurs {n} times, expected once", path
                )
            if _occurs_as_sharing_var(m.body, a):
                raise LamSyntaxError(
                    f"shared variable {a} used as a sharing variable", path
                )
        _validate(m.body, path + ("share",))
        return
    if isinstance(m, InterSub):
        _validate(m.body, path + ("isub",))
        for i, n in enumerate(m.bag.items):
            _validate(n, path + (f"isub-bag[{i}]",))
        return
    if isinstance(m, ExplSub):
        if not m.aliases:
            raise LamSyntaxError("explicit substitution needs variables", path)
        if len(set(m.aliases)) != len(m.aliases):
            raise LamSyntaxError("duplicate substitution variable", path)
        if m.bag.size() != len(m.aliases):
            raise LamSyntaxError(
                f"bag size {m.bag.size()} differs from {len(m.aliases)} variables",
                path,
            )
        for a in m.aliases:
            if count_free(m.body, a) == 0:
                raise LamSyntaxError(f"substitution variable {a} unused", path)
            if _occurs_as_sharing_var(m.body, a):
                raise LamSyntaxError(
                    f"substitution variable {a} used as a sharing variable", path
                )
            if _occurs_in_explsub(m.body, a):
                raise LamSyntaxError(
                    f"substitution variable {a} occurs in a nested explicit substitution",
                    path,
                )
        _validate(m.body, path + ("esub",))
        for i, n in enumerate(m.bag.items):
            _validate(n, path + (f"esub-bag[{i}]",))
        return
    raise TypeError(f"not a term: {m!r}")


# ---------------------------------------------------------------------------
# head variable


def head(m: Term) -> Union[str, Term]:
    """Evaluation-position variable or constant of a term."""
    if isinstance(m, Var):
        return m.name
    if isinstance(m, (Abs, Fail, Okay, InterSub)):
        return m
    if isinstance(m, App):
        return head(m.fun)
    if isinstance(m, ExplSub):
        return head(m.body)
    if isinstance(m, Sharing):
        h = head(m.body)
        if isinstance(h, str) and h in m.aliases:
            return m.var
        return h
    raise TypeError(f"not a term: {m!r}")


def has_success(m: Term) -> bool:
    return isinstance(head(m), Okay)


# ---------------------------------------------------------------------------
# substitution (used by fetching; the substituted variable occurs once)


def all_vars(m: Term) -> frozenset[str]:
    if isinstance(m, Var):
        return frozenset((m.name,))
    if isinstance(m, Abs):
        return all_vars(m.body) | {m.var}
    if isinstance(m, App):
        out = all_vars(m.fun)
        for n in m.bag.items:
            out |= all_vars(n)
        return out
    if isinstance(m, Sharing):
        return all_vars(m.body) | set(m.aliases) | {m.var}
    if isinstance(m, InterSub):
        out = all_vars(m.body) | {m.var}
        for n in m.bag.items:
            out |= all_vars(n)
        return out
    if isinstance(m, ExplSub):
        out = all_vars(m.body) | set(m.aliases)
        for n in m.bag.items:
            out |= all_vars(n)
        return out
    if isinstance(m, Fail):
        return m.fvs
    if isinstance(m, Okay):
        return frozenset()
    raise TypeError(f"not a term: {m!r}")


def fresh_var(base: str, used: set[str]) -> str:
    if base not in used:
        return base
    i = 1
    while f"{base}{i}" in used:
        i += 1
    return f"{base}{i}"


def subst(m: Term, x: str, n: Term) -> Term:
    """Capture-avoiding substitution of term n for free occurrences of x."""
    return _subst(m, x, n, set(all_vars(m) | all_vars(n) | {x}))


def _subst(m: Term, x: str, n: Term, used: set[str]) -> Term:
    if isinstance(m, Var):
        return n if m.name == x else m
    if isinstance(m, Okay):
        return m
    if isinstance(m, Fail):
        if x in m.fvs:
            return Fail((m.fvs - {x}) | fv(n), m.ann)
        return m
    if isinstance(m, Abs):
        if m.var == x:
            return m
        if m.var in fv(n):
            v2 = fresh_var(m.var, used)
            used.add(v2)
            return Abs(v2, _subst(_subst(m.body, m.var, Var(v2), used), x, n, used), m.ann)
        return Abs(m.var, _subst(m.body, x, n, used), m.ann)
    if isinstance(m, App):
        return App(
            _subst(m.fun, x, n, used),
            Bag(tuple(_subst(q, x, n, used) for q in m.bag.items)),
        )
    if isinstance(m, Sharing):
        if m.var == x:
            raise LamSyntaxError(f"cannot substitute a term for sharing variable {x}")
        if x in m.aliases:
            return m
        aliases = list(m.aliases)
        body = m.body
        clash = [a for a in aliases if a in fv(n)]
        for a in clash:
            a2 = fresh_var(a, used)
            used.add(a2)
            body = _subst(body, a, Var(a2), used)
            aliases[aliases.index(a)] = a2
        return Sharing(_subst(body, x, n, used), tuple(aliases), m.var)
    if isinstance(m, InterSub):
        newbag = Bag(tuple(_subst(q, x, n, used) for q in m.bag.items))
        if m.var == x:
            return InterSub(m.body, newbag, m.var, m.ann)
        body, var = m.body, m.var
        if var in fv(n):
            v2 = fresh_var(var, used)
            used.add(v2)
            body = _subst(body, var, Var(v2), used)
            var = v2
        return InterSub(_subst(body, x, n, used), newbag, var, m.ann)
    if isinstance(m, ExplSub):
        newbag = Bag(tuple(_subst(q, x, n, used) for q in m.bag.items))
        if x in m.aliases:
            return ExplSub(m.body, newbag, m.aliases, m.ann)
        aliases = list(m.aliases)
        body = m.body
        clash = [a for a in aliases if a in fv(n)]
        for a in clash:
            a2 = fresh_var(a, used)
            used.add(a2)
            body = _subst(body, a, Var(a2), used)
            aliases[aliases.index(a)] = a2
        return ExplSub(_subst(body, x, n, used), newbag, tuple(aliases), m.ann)
    raise TypeError(f"not a term: {m!r}")


# ---------------------------------------------------------------------------
# alpha-invariant keys


def term_key(m: Term, env: dict[str, str] | None = None) -> str:
    out: list[str] = []
    _tkey(m, env or {}, out)
    return "".join(out)


def _kv(x: str, env: dict[str, str]) -> str:
    return env.get(x, x)


def _tkey(m: Term, env: dict[str, str], out: list[str]) -> None:
    if isinstance(m, Var):
        out.append(f"v:{_kv(m.name, env)}")
        return
    if isinstance(m, Okay):
        out.append("OK")
        return
    if isinstance(m, Fail):
        names = ",".join(sorted(_kv(x, env) for x in m.fvs))
        out.append(f"fail[{names}]")
        return
    if isinstance(m, Abs):
        env2 = dict(env)
        env2[m.var] = f"\x01{len(env)}"
        out.append("abs(")
        _tkey(m.body, env2, out)
        out.append(")")
        return
    if isinstance(m, App):
        out.append("app(")
        _tkey(m.fun, env, out)
        out.append(";")
        _bkey(m.bag, env, out)
        out.append(")")
        return
    if isinstance(m, Sharing):
        env2 = dict(env)
        for i, a in enumerate(m.aliases):
            env2[a] = f"\x01{len(env)}.{i}"
        out.append("shr(")
        _tkey(m.body, env2, out)
        out.append(f";{len(m.aliases)};{_kv(m.var, env)})")
        return
    if isinstance(m, InterSub):
        env2 = dict(env)
        env2[m.var] = f"\x01{len(env)}"
        out.append("isb(")
        _tkey(m.body, env2, out)
        out.append(";")
        _bkey(m.bag, env, out)
        out.append(")")
        return
    if isinstance(m, ExplSub):
        env2 = dict(env)
        for i, a in enumerate(m.aliases):
            env2[a] = f"\x01{len(env)}.{i}"
        out.append("esb(")
        _tkey(m.body, env2, out)
        out.append(";")
        _bkey(m.bag, env, out)
        out.append(")")
        return
    raise TypeError(f"not a term: {m!r}")


def _bkey(c: Bag, env: dict[str, str], out: list[str]) -> None:
    out.append("[")
    for n in c.items:
        _tkey(n, env, out)
        out.append(",")
    out.append("]")


def alpha_equal(m: Term, n: Term) -> bool:
    return term_key(m) == term_key(n)


# ---------------------------------------------------------------------------
# reduction


def enumerate_steps(m: Term) -> list[tuple[str, Term]]:
    """All one-step reductions with rule labels, duplicates included (one
    fetch per bag position)."""
    out: list[tuple[str, Term]] = []

    if isinstance(m, App):
        if isinstance(m.fun, Abs):
            out.append(("Beta", InterSub(m.fun.body, m.bag, m.fun.var, m.fun.ann)))
        elif isinstance(m.fun, Fail):
            out.append(("Cons1", Fail(m.fun.fvs | bag_fv(m.bag), m.fun.ann)))
        for rule, f2 in enumerate_steps(m.fun):
            out.append((rule, App(f2, m.bag)))
        return out

    if isinstance(m, InterSub):
        body = m.body
        if isinstance(body, Sharing) and body.var == m.var:
            k = len(body.aliases)
            if m.bag.size() == k:
                if isinstance(body.body, Fail) and set(body.aliases) <= body.body.fvs:
                    rest = (body.body.fvs - set(body.aliases)) | bag_fv(m.bag)
                    out.append(("Cons2", Fail(rest, body.body.ann)))
                elif not isinstance(body.body, Fail):
                    base = m.ann.base if m.ann is not None else None
                    if k == 0:
                        out.append(("ExSub", body.body))
                    else:
                        out.append(("ExSub", ExplSub(body.body, m.bag, body.aliases, base)))
            else:
                dangling = (fv(body.body) - set(body.aliases)) | bag_fv(m.bag)
                out.append(("FailL", Fail(dangling)))
        return out

    if isinstance(m, ExplSub):
        body = m.body
        if isinstance(body, Fail) and set(m.aliases) <= body.fvs:
            out.append(("Cons3", Fail((body.fvs - set(m.aliases)) | bag_fv(m.bag), body.ann)))
        h = head(body)
        if isinstance(h, str) and h in m.aliases:
            rest_aliases = tuple(a for a in m.aliases if a != h)
            for i, item in enumerate(m.bag.items):
                rest_bag = Bag(m.bag.items[:i] + m.bag.items[i + 1:])
                nbody = subst(body, h, item)
                if rest_aliases:
                    out.append(("Fetch", ExplSub(nbody, rest_bag, rest_aliases, m.ann)))
                else:
                    out.append(("Fetch", nbody))
        for rule, b2 in enumerate_steps(body):
            out.append((rule, ExplSub(b2, m.bag, m.aliases, m.ann)))
        return out

    if isinstance(m, Sharing):
        for rule, b2 in enumerate_steps(m.body):
            out.append((rule, Sharing(b2, m.aliases, m.var)))
        return out

    return out


def reducts(m: Term) -> frozenset[Term]:
    """One-step reducts, deduplicated up to alpha."""
    seen: dict[str, Term] = {}
    for _, q in enumerate_steps(m):
        seen.setdefault(term_key(q), q)
    return frozenset(seen.values())


def reducts_list(m: Term) -> list[tuple[str, Term]]:
    seen: set[str] = set()
    out = []
    for rule, q in enumerate_steps(m):
        k = term_key(q)
        if (rule, k) not in seen:
            seen.add((rule, k))
            out.append((rule, q))
    out.sort(key=lambda rq: (rq[0], term_key(rq[1])))
    return out


def is_normal_form(m: Term) -> bool:
    return not enumerate_steps(m)
