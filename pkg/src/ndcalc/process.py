"""Process syntax for the nondeterministic session pi calculus.

Provides the abstract syntax, free names, capture-avoiding substitution,
structural-congruence canonical forms, prefixes with their compatibility
relation, one-hole contexts, and the branch-grouping machinery used by the
reduction engine to keep compatible alternatives and discard impossible ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .sestypes import SessionType, dual


# ---------------------------------------------------------------------------
# names and data payloads


@dataclass(frozen=True, order=True)
class Name:
    """Channel name.  Engine-generated names carry a freshness tag; names
    parsed from source never do, so the two sets stay disjoint."""

    token: str
    tag: Optional[int] = None

    def __str__(self) -> str:
        return self.token if self.tag is None else f"{self.token}@{self.tag}"

    def sort_key(self) -> tuple[str, int]:
        return (self.token, -1 if self.tag is None else self.tag)


@dataclass(frozen=True)
class Lit:
    """Primitive data literal carried by a data-send prefix."""

    text: str

    def __str__(self) -> str:
        return self.text


Payload = Union[Lit, Name]


def fresh_name(token: str, used: set[Name]) -> Name:
    n = Name(token)
    if n not in used:
        return n
    i = 0
    while Name(token, i) in used:
        i += 1
    return Name(token, i)


# ---------------------------------------------------------------------------
# process syntax


class Process:
    __slots__ = ()


@dataclass(frozen=True)
class Inact(Process):
    pass


@dataclass(frozen=True)
class Ok(Process):
    """Success marker, used to observe reachability of success."""


@dataclass(frozen=True)
class Fwd(Process):
    a: Name
    b: Name


@dataclass(frozen=True)
class Res(Process):
    """Restriction-composition: the two components implement complementary
    behavior on ``name``.  ``ann`` is the left component's protocol."""

    name: Name
    ann: Optional[SessionType]
    left: Process
    right: Process


@dataclass(frozen=True)
class Par(Process):
    parts: tuple[Process, ...]


@dataclass(frozen=True)
class Alt(Process):
    """Nondeterministic choice between alternative implementations."""

    parts: tuple[Process, ...]


@dataclass(frozen=True)
class Send(Process):
    """Bound output: sends fresh ``obj`` on ``subj``; ``obj_side`` implements
    the sent name, ``cont_side`` the continuation of ``subj``."""

    subj: Name
    obj: Name
    obj_side: Process
    cont_side: Process


@dataclass(frozen=True)
class Recv(Process):
    subj: Name
    obj: Name
    cont: Process


@dataclass(frozen=True)
class Pick(Process):
    subj: Name
    label: str
    cont: Process


@dataclass(frozen=True)
class Case(Process):
    subj: Name
    branches: tuple[tuple[str, Process], ...]

    def __post_init__(self):
        labels = [lbl for lbl, _ in self.branches]
        if len(labels) != len(set(labels)):
            raise ValueError("duplicate label in case")
        object.__setattr__(self, "branches", tuple(sorted(self.branches)))

    def labels(self) -> frozenset[str]:
        return frozenset(lbl for lbl, _ in self.branches)

    def branch(self, label: str) -> Process:
        return dict(self.branches)[label]


@dataclass(frozen=True)
class Close(Process):
    subj: Name


@dataclass(frozen=True)
class Wait(Process):
    subj: Name
    cont: Process


@dataclass(frozen=True)
class Avail(Process):
    """Confirms availability of the session on ``subj``."""

    subj: Name
    cont: Process


@dataclass(frozen=True)
class Unavail(Process):
    """Signals failure to provide the session on ``subj``."""

    subj: Name


@dataclass(frozen=True)
class Expect(Process):
    """Depends on availability of ``subj``; on failure the sessions in
    ``deps`` are cancelled."""

    subj: Name
    deps: frozenset[Name]
    cont: Process


@dataclass(frozen=True)
class SendData(Process):
    subj: Name
    payload: Payload
    prim: str
    cont: Process


@dataclass(frozen=True)
class RecvData(Process):
    subj: Name
    var: Name
    prim: str
    cont: Process


def par(*ps: Process) -> Process:
    flat: list[Process] = []
    for p in ps:
        if isinstance(p, Par):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        return Inact()
    if len(flat) == 1:
        return flat[0]
    return Par(tuple(flat))


def alt(*ps: Process) -> Process:
    flat: list[Process] = []
    for p in ps:
        if isinstance(p, Alt):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        raise ValueError("empty choice")
    if len(flat) == 1:
        return flat[0]
    return Alt(tuple(flat))


# ---------------------------------------------------------------------------
# free names, all names


def free_names(p: Process) -> frozenset[Name]:
    cached = p.__dict__.get("_fn")
    if cached is not None:
        return cached
    out = _free_names(p)
    object.__setattr__(p, "_fn", out)
    return out


def _free_names(p: Process) -> frozenset[Name]:
    if isinstance(p, (Inact, Ok)):
        return frozenset()
    if isinstance(p, Fwd):
        return frozenset((p.a, p.b))
    if isinstance(p, Res):
        return (free_names(p.left) | free_names(p.right)) - {p.name}
    if isinstance(p, (Par, Alt)):
        out: frozenset[Name] = frozenset()
        for q in p.parts:
            out |= free_names(q)
        return out
    if isinstance(p, Send):
        return frozenset((p.subj,)) | (
            (free_names(p.obj_side) | free_names(p.cont_side)) - {p.obj}
        )
    if isinstance(p, Recv):
        return frozenset((p.subj,)) | (free_names(p.cont) - {p.obj})
    if isinstance(p, Pick):
        return frozenset((p.subj,)) | free_names(p.cont)
    if isinstance(p, Case):
        out = frozenset((p.subj,))
        for _, q in p.branches:
            out |= free_names(q)
        return out
    if isinstance(p, Close):
        return frozenset((p.subj,))
    if isinstance(p, (Wait, Avail)):
        return frozenset((p.subj,)) | free_names(p.cont)
    if isinstance(p, Unavail):
        return frozenset((p.subj,))
    if isinstance(p, Expect):
        return frozenset((p.subj,)) | p.deps | free_names(p.cont)
    if isinstance(p, SendData):
        extra = frozenset((p.payload,)) if isinstance(p.payload, Name) else frozenset()
        return frozenset((p.subj,)) | extra | free_names(p.cont)
    if isinstance(p, RecvData):
        return frozenset((p.subj,)) | (free_names(p.cont) - {p.var})
    raise TypeError(f"not a process: {p!r}")


def all_names(p: Process) -> frozenset[Name]:
    """Every name occurring in p, free or bound."""
    cached = p.__dict__.get("_an")
    if cached is not None:
        return cached
    out = _all_names(p)
    object.__setattr__(p, "_an", out)
    return out


def _all_names(p: Process) -> frozenset[Name]:
    if isinstance(p, (Inact, Ok)):
        return frozenset()
    if isinstance(p, Fwd):
        return frozenset((p.a, p.b))
    if isinstance(p, Res):
        return all_names(p.left) | all_names(p.right) | {p.name}
    if isinstance(p, (Par, Alt)):
        out: frozenset[Name] = frozenset()
        for q in p.parts:
            out |= all_names(q)
        return out
    if isinstance(p, Send):
        return frozenset((p.subj, p.obj)) | all_names(p.obj_side) | all_names(p.cont_side)
    if isinstance(p, Recv):
        return frozenset((p.subj, p.obj)) | all_names(p.cont)
    if isinstance(p, Pick):
        return frozenset((p.subj,)) | all_names(p.cont)
    if isinstance(p, Case):
        out = frozenset((p.subj,))
        for _, q in p.branches:
            out |= all_names(q)
        return out
    if isinstance(p, Close):
        return frozenset((p.subj,))
    if isinstance(p, (Wait, Avail)):
        return frozenset((p.subj,)) | all_names(p.cont)
    if isinstance(p, Unavail):
        return frozenset((p.subj,))
    if isinstance(p, Expect):
        return frozenset((p.subj,)) | p.deps | all_names(p.cont)
    if isinstance(p, SendData):
        extra = frozenset((p.payload,)) if isinstance(p.payload, Name) else frozenset()
        return frozenset((p.subj,)) | extra | all_names(p.cont)
    if isinstance(p, RecvData):
        return frozenset((p.subj, p.var)) | all_names(p.cont)
    raise TypeError(f"not a process: {p!r}")


# ---------------------------------------------------------------------------
# substitution


def _subst_name(n: Name, target: Name, repl: Name) -> Name:
    return repl if n == target else n


def substitute(p: Process, target: Name, repl: Name) -> Process:
    """Capture-avoiding substitution of repl for free occurrences of target."""
    if target == repl:
        return p
    return _subst(p, target, repl, all_names(p) | {target, repl})


def _subst(p: Process, t: Name, r: Name, used: set[Name] | frozenset[Name]) -> Process:
    sn = _subst_name
    if isinstance(p, Inact) or isinstance(p, Ok):
        return p
    if isinstance(p, Fwd):
        return Fwd(sn(p.a, t, r), sn(p.b, t, r))
    if isinstance(p, Res):
        x, left, right = p.name, p.left, p.right
        if x == t:
            return p
        if x == r:
            x2 = fresh_name(x.token, set(used))
            used = used | {x2}
            left = _subst(left, x, x2, used)
            right = _subst(right, x, x2, used)
            x = x2
        return Res(x, p.ann, _subst(left, t, r, used), _subst(right, t, r, used))
    if isinstance(p, Par):
        return Par(tuple(_subst(q, t, r, used) for q in p.parts))
    if isinstance(p, Alt):
        return Alt(tuple(_subst(q, t, r, used) for q in p.parts))
    if isinstance(p, Send):
        y, po, pc = p.obj, p.obj_side, p.cont_side
        if y == t:
            return Send(sn(p.subj, t, r), y, po, pc)
        if y == r:
            y2 = fresh_name(y.token, set(used))
            used = used | {y2}
            po = _subst(po, y, y2, used)
            pc = _subst(pc, y, y2, used)
            y = y2
        return Send(sn(p.subj, t, r), y, _subst(po, t, r, used), _subst(pc, t, r, used))
    if isinstance(p, Recv):
        y, cont = p.obj, p.cont
        if y == t:
            return Recv(sn(p.subj, t, r), y, cont)
        if y == r:
            y2 = fresh_name(y.token, set(used))
            used = used | {y2}
            cont = _subst(cont, y, y2, used)
            y = y2
        return Recv(sn(p.subj, t, r), y, _subst(cont, t, r, used))
    if isinstance(p, Pick):
        return Pick(sn(p.subj, t, r), p.label, _subst(p.cont, t, r, used))
    if isinstance(p, Case):
        return Case(
            sn(p.subj, t, r),
            tuple((lbl, _subst(q, t, r, used)) for lbl, q in p.branches),
        )
    if isinstance(p, Close):
        return Close(sn(p.subj, t, r))
    if isinstance(p, Wait):
        return Wait(sn(p.subj, t, r), _subst(p.cont, t, r, used))
    if isinstance(p, Avail):
        return Avail(sn(p.subj, t, r), _subst(p.cont, t, r, used))
    if isinstance(p, Unavail):
        return Unavail(sn(p.subj, t, r))
    if isinstance(p, Expect):
        deps = frozenset(sn(w, t, r) for w in p.deps)
        return Expect(sn(p.subj, t, r), deps, _subst(p.cont, t, r, used))
    if isinstance(p, SendData):
        payload = p.payload
        if isinstance(payload, Name):
            payload = sn(payload, t, r)
        return SendData(sn(p.subj, t, r), payload, p.prim, _subst(p.cont, t, r, used))
    if isinstance(p, RecvData):
        v, cont = p.var, p.cont
        if v == t:
            return RecvData(sn(p.subj, t, r), v, p.prim, cont)
        if v == r:
            v2 = fresh_name(v.token, set(used))
            used = used | {v2}
            cont = _subst(cont, v, v2, used)
            v = v2
        return RecvData(sn(p.subj, t, r), v, p.prim, _subst(cont, t, r, used))
    raise TypeError(f"not a process: {p!r}")


def substitute_payload(p: Process, var: Name, value: Payload) -> Process:
    """Replace payload references to a data variable with a received value."""
    if isinstance(p, (Inact, Ok, Fwd, Close, Unavail)):
        return p
    if isinstance(p, Res):
        if p.name == var:
            return p
        return Res(p.name, p.ann, substitute_payload(p.left, var, value),
                   substitute_payload(p.right, var, value))
    if isinstance(p, Par):
        return Par(tuple(substitute_payload(q, var, value) for q in p.parts))
    if isinstance(p, Alt):
        return Alt(tuple(substitute_payload(q, var, value) for q in p.parts))
    if isinstance(p, Send):
        if p.obj == var:
            return p
        return Send(p.subj, p.obj, substitute_payload(p.obj_side, var, value),
                    substitute_payload(p.cont_side, var, value))
    if isinstance(p, Recv):
        if p.obj == var:
            return p
        return Recv(p.subj, p.obj, substitute_payload(p.cont, var, value))
    if isinstance(p, Pick):
        return Pick(p.subj, p.label, substitute_payload(p.cont, var, value))
    if isinstance(p, Case):
        return Case(p.subj, tuple((l, substitute_payload(q, var, value))
                                  for l, q in p.branches))
    if isinstance(p, Wait):
        return Wait(p.subj, substitute_payload(p.cont, var, value))
    if isinstance(p, Avail):
        return Avail(p.subj, substitute_payload(p.cont, var, value))
    if isinstance(p, Expect):
        return Expect(p.subj, p.deps, substitute_payload(p.cont, var, value))
    if isinstance(p, SendData):
        payload = value if p.payload == var else p.payload
        return SendData(p.subj, payload, p.prim, substitute_payload(p.cont, var, value))
    if isinstance(p, RecvData):
        if p.var == var:
            return p
        return RecvData(p.subj, p.var, p.prim, substitute_payload(p.cont, var, value))
    raise TypeError(f"not a process: {p!r}")


# ---------------------------------------------------------------------------
# alpha handling: Barendregt freshening and alpha-invariant keys


def barendregt(p: Process) -> Process:
    """Rename binders so they are pairwise distinct and disjoint from every
    other name in the term.  Deterministic."""
    used = set(all_names(p))
    seen: set[Name] = set(free_names(p))

    def go(q: Process) -> Process:
        nonlocal used, seen
        if isinstance(q, (Inact, Ok, Fwd, Close, Unavail)):
            return q
        if isinstance(q, Res):
            x = q.name
            left, right = q.left, q.right
            if x in seen:
                x2 = fresh_name(x.token, used)
                used.add(x2)
                left = substitute(left, x, x2)
                right = substitute(right, x, x2)
                x = x2
            seen.add(x)
            return Res(x, q.ann, go(left), go(right))
        if isinstance(q, Par):
            return Par(tuple(go(c) for c in q.parts))
        if isinstance(q, Alt):
            return Alt(tuple(go(c) for c in q.parts))
        if isinstance(q, Send):
            y, po, pc = q.obj, q.obj_side, q.cont_side
            if y in seen:
                y2 = fresh_name(y.token, used)
                used.add(y2)
                po = substitute(po, y, y2)
                pc = substitute(pc, y, y2)
                y = y2
            seen.add(y)
            return Send(q.subj, y, go(po), go(pc))
        if isinstance(q, Recv):
            y, cont = q.obj, q.cont
            if y in seen:
                y2 = fresh_name(y.token, used)
                used.add(y2)
                cont = substitute(cont, y, y2)
                y = y2
            seen.add(y)
            return Recv(q.subj, y, go(cont))
        if isinstance(q, Pick):
            return Pick(q.subj, q.label, go(q.cont))
        if isinstance(q, Case):
            return Case(q.subj, tuple((l, go(c)) for l, c in q.branches))
        if isinstance(q, Wait):
            return Wait(q.subj, go(q.cont))
        if isinstance(q, Avail):
            return Avail(q.subj, go(q.cont))
        if isinstance(q, Expect):
            return Expect(q.subj, q.deps, go(q.cont))
        if isinstance(q, SendData):
            return SendData(q.subj, q.payload, q.prim, go(q.cont))
        if isinstance(q, RecvData):
            v, cont = q.var, q.cont
            if v in seen:
                v2 = fresh_name(v.token, used)
                used.add(v2)
                cont = substitute(cont, v, v2)
                v = v2
            seen.add(v)
            return RecvData(q.subj, v, q.prim, go(cont))
        raise TypeError(f"not a process: {q!r}")

    return go(p)


def struct_key(p: Process, env: dict[Name, str] | None = None) -> str:
    """Alpha-invariant, annotation-blind serialization.  Two processes in
    canonical form are structurally congruent iff their keys are equal."""
    out: list[str] = []
    _key(p, env or {}, out)
    return "".join(out)


def _kn(n: Name, env: dict[Name, str]) -> str:
    got = env.get(n)
    if got is not None:
        return got
    return f"{n.token}@{n.tag}" if n.tag is not None else n.token


def _key(p: Process, env: dict[Name, str], out: list[str]) -> None:
    if isinstance(p, Inact):
        out.append("0")
        return
    if isinstance(p, Ok):
        out.append("OK")
        return
    if isinstance(p, Fwd):
        a, b = sorted((_kn(p.a, env), _kn(p.b, env)))
        out.append(f"fw({a},{b})")
        return
    if isinstance(p, Res):
        env2 = dict(env)
        env2[p.name] = f"\x01{len(env)}"
        out.append("res(")
        _key(p.left, env2, out)
        out.append(";")
        _key(p.right, env2, out)
        out.append(")")
        return
    if isinstance(p, Par):
        out.append("par(")
        for q in p.parts:
            _key(q, env, out)
            out.append(",")
        out.append(")")
        return
    if isinstance(p, Alt):
        out.append("alt(")
        for q in p.parts:
            _key(q, env, out)
            out.append(",")
        out.append(")")
        return
    if isinstance(p, Send):
        env2 = dict(env)
        env2[p.obj] = f"\x01{len(env)}"
        out.append(f"snd({_kn(p.subj, env)};")
        _key(p.obj_side, env2, out)
        out.append(";")
        _key(p.cont_side, env2, out)
        out.append(")")
        return
    if isinstance(p, Recv):
        env2 = dict(env)
        env2[p.obj] = f"\x01{len(env)}"
        out.append(f"rcv({_kn(p.subj, env)};")
        _key(p.cont, env2, out)
        out.append(")")
        return
    if isinstance(p, Pick):
        out.append(f"pick({_kn(p.subj, env)},{p.label};")
        _key(p.cont, env, out)
        out.append(")")
        return
    if isinstance(p, Case):
        out.append(f"case({_kn(p.subj, env)};")
        for lbl, q in p.branches:
            out.append(f"{lbl}:")
            _key(q, env, out)
            out.append(",")
        out.append(")")
        return
    if isinstance(p, Close):
        out.append(f"cls({_kn(p.subj, env)})")
        return
    if isinstance(p, Wait):
        out.append(f"wait({_kn(p.subj, env)};")
        _key(p.cont, env, out)
        out.append(")")
        return
    if isinstance(p, Avail):
        out.append(f"avl({_kn(p.subj, env)};")
        _key(p.cont, env, out)
        out.append(")")
        return
    if isinstance(p, Unavail):
        out.append(f"unv({_kn(p.subj, env)})")
        return
    if isinstance(p, Expect):
        ws = ",".join(sorted(_kn(w, env) for w in p.deps))
        out.append(f"exp({_kn(p.subj, env)},[{ws}];")
        _key(p.cont, env, out)
        out.append(")")
        return
    if isinstance(p, SendData):
        pay = f"'{p.payload.text}'" if isinstance(p.payload, Lit) else _kn(p.payload, env)
        out.append(f"dsn({_kn(p.subj, env)},{pay},#{p.prim};")
        _key(p.cont, env, out)
        out.append(")")
        return
    if isinstance(p, RecvData):
        env2 = dict(env)
        env2[p.var] = f"\x01{len(env)}"
        out.append(f"drc({_kn(p.subj, env)},#{p.prim};")
        _key(p.cont, env2, out)
        out.append(")")
        return
    raise TypeError(f"not a process: {p!r}")


# ---------------------------------------------------------------------------
# canonicalization


_CANON_MAX_PASSES = 64


def canonicalize(p: Process) -> Process:
    """Canonical representative of the structural congruence class.

    Parallel and choice become flattened, sorted multisets (choice also
    deduplicated), forwarders and restriction components are oriented by the
    structural order, unit components vanish, components not mentioning a
    bound name are extruded out of its restriction, and independent nested
    restrictions are reordered toward the smaller key.  The rewrite strategy
    is a sound, terminating approximation of the full congruence.
    """
    if p.__dict__.get("_canon"):
        return p
    cur = barendregt(p)
    seen: dict[str, Process] = {}
    prev_key = None
    for _ in range(_CANON_MAX_PASSES):
        cur, k = _normk(cur, {})
        if k == prev_key:
            break
        if k in seen:
            # rewrite cycle: settle on the smallest key seen, deterministically
            cur = seen[min(seen)]
            break
        seen[k] = cur
        prev_key = k
    object.__setattr__(cur, "_canon", True)
    return cur


def struct_congruent(p: Process, q: Process) -> bool:
    return struct_key(canonicalize(p)) == struct_key(canonicalize(q))


def _components(p: Process) -> list[Process]:
    if isinstance(p, Par):
        return list(p.parts)
    if isinstance(p, Inact):
        return []
    return [p]


def _bind(env: dict[Name, str], n: Name) -> dict[Name, str]:
    env2 = dict(env)
    env2[n] = f"\x01{len(env)}"
    return env2


# Normalization results keyed by object identity plus the part of the
# environment the subterm can see; entries pin their objects so ids stay
# valid.  Reducts share most subtrees with their canonical source, so
# re-canonicalization only pays for the rewritten spine.
_NORM_CACHE: dict = {}
_NORM_CACHE_LIMIT = 400_000


def _cache_key(p: Process, env: dict[Name, str], commute: bool):
    fns = free_names(p)
    renv = tuple(sorted((n.token, -1 if n.tag is None else n.tag, env[n]) for n in fns if n in env))
    return (id(p), len(env), commute, renv)


def _normk(p: Process, env: dict[Name, str], commute: bool = True) -> tuple[Process, str]:
    ck = _cache_key(p, env, commute)
    hit = _NORM_CACHE.get(ck)
    if hit is not None:
        return hit[1], hit[2]
    q, key = _normk_raw(p, env, commute)
    if len(_NORM_CACHE) > _NORM_CACHE_LIMIT:
        _NORM_CACHE.clear()
    _NORM_CACHE[ck] = (p, q, key)
    if id(q) != id(p):
        _NORM_CACHE[_cache_key(q, env, commute)] = (q, q, key)
    return q, key


def _normk_raw(p: Process, env: dict[Name, str], commute: bool = True) -> tuple[Process, str]:
    """Normalize and return the term with its key under env.  All ordering
    decisions use keys under env so alpha-variants normalize alike; keys are
    composed bottom-up, in the exact format of struct_key."""
    if isinstance(p, Inact):
        return p, "0"
    if isinstance(p, Ok):
        return p, "OK"
    if isinstance(p, Close):
        return p, f"cls({_kn(p.subj, env)})"
    if isinstance(p, Unavail):
        return p, f"unv({_kn(p.subj, env)})"
    if isinstance(p, Fwd):
        a, b = sorted((_kn(p.a, env), _kn(p.b, env)))
        q = Fwd(p.b, p.a) if _kn(p.b, env) < _kn(p.a, env) else p
        return q, f"fw({a},{b})"
    if isinstance(p, Par):
        flat: list[tuple[str, Process]] = []
        for q in p.parts:
            q, k = _normk(q, env, commute)
            if isinstance(q, Inact):
                continue
            if isinstance(q, Par):
                # children of an already-normalized Par keep their subkeys
                for c in q.parts:
                    flat.append((struct_key(c, env), c))
            else:
                flat.append((k, q))
        if not flat:
            return Inact(), "0"
        if len(flat) == 1:
            return flat[0][1], flat[0][0]
        flat.sort(key=lambda kq: kq[0])
        key = "par(" + "".join(k + "," for k, _ in flat) + ")"
        return Par(tuple(q for _, q in flat)), key
    if isinstance(p, Alt):
        flat = []
        for q in p.parts:
            q, k = _normk(q, env, commute)
            if isinstance(q, Alt):
                for c in q.parts:
                    flat.append((struct_key(c, env), c))
            else:
                flat.append((k, q))
        flat.sort(key=lambda kq: kq[0])
        dedup: list[tuple[str, Process]] = []
        last = None
        for k, q in flat:
            if k != last:
                dedup.append((k, q))
                last = k
        if len(dedup) == 1:
            return dedup[0][1], dedup[0][0]
        key = "alt(" + "".join(k + "," for k, _ in dedup) + ")"
        return Alt(tuple(q for _, q in dedup)), key
    if isinstance(p, Res):
        env2 = _bind(env, p.name)
        left, kl = _normk(p.left, env2, commute)
        right, kr = _normk(p.right, env2, commute)
        return _norm_res(p.name, p.ann, left, kl, right, kr, env, commute)
    if isinstance(p, Send):
        env2 = _bind(env, p.obj)
        po, ko = _normk(p.obj_side, env2, commute)
        pc, kc = _normk(p.cont_side, env2, commute)
        return Send(p.subj, p.obj, po, pc), f"snd({_kn(p.subj, env)};{ko};{kc})"
    if isinstance(p, Recv):
        pc, kc = _normk(p.cont, _bind(env, p.obj), commute)
        return Recv(p.subj, p.obj, pc), f"rcv({_kn(p.subj, env)};{kc})"
    if isinstance(p, Pick):
        pc, kc = _normk(p.cont, env, commute)
        return Pick(p.subj, p.label, pc), f"pick({_kn(p.subj, env)},{p.label};{kc})"
    if isinstance(p, Case):
        parts = []
        keys = [f"case({_kn(p.subj, env)};"]
        for lbl, q in p.branches:
            q, k = _normk(q, env, commute)
            parts.append((lbl, q))
            keys.append(f"{lbl}:{k},")
        keys.append(")")
        return Case(p.subj, tuple(parts)), "".join(keys)
    if isinstance(p, Wait):
        pc, kc = _normk(p.cont, env, commute)
        return Wait(p.subj, pc), f"wait({_kn(p.subj, env)};{kc})"
    if isinstance(p, Avail):
        pc, kc = _normk(p.cont, env, commute)
        return Avail(p.subj, pc), f"avl({_kn(p.subj, env)};{kc})"
    if isinstance(p, Expect):
        pc, kc = _normk(p.cont, env, commute)
        ws = ",".join(sorted(_kn(w, env) for w in p.deps))
        return Expect(p.subj, p.deps, pc), f"exp({_kn(p.subj, env)},[{ws}];{kc})"
    if isinstance(p, SendData):
        pc, kc = _normk(p.cont, env, commute)
        pay = f"'{p.payload.text}'" if isinstance(p.payload, Lit) else _kn(p.payload, env)
        return (
            SendData(p.subj, p.payload, p.prim, pc),
            f"dsn({_kn(p.subj, env)},{pay},#{p.prim};{kc})",
        )
    if isinstance(p, RecvData):
        pc, kc = _normk(p.cont, _bind(env, p.var), commute)
        return RecvData(p.subj, p.var, p.prim, pc), f"drc({_kn(p.subj, env)},#{p.prim};{kc})"
    raise TypeError(f"not a process: {p!r}")


def _norm_res(
    x: Name,
    ann,
    left: Process,
    kl: str,
    right: Process,
    kr: str,
    env: dict[Name, str],
    commute: bool,
) -> tuple[Process, str]:
    # extrude components that do not mention the bound name; their keys must
    # be recomputed under env since binder depths below them shift
    stay_l, out = [], []
    for c in _components(left):
        (stay_l if x in free_names(c) else out).append(c)
    stay_r = []
    for c in _components(right):
        (stay_r if x in free_names(c) else out).append(c)

    env2 = _bind(env, x)
    if out:
        new_l = par(*stay_l)
        new_r = par(*stay_r)
        kl = struct_key(new_l, env2)
        kr = struct_key(new_r, env2)
    else:
        new_l, new_r = left, right

    if kr < kl:
        new_l, new_r = new_r, new_l
        kl, kr = kr, kl
        ann = dual(ann) if ann is not None else None

    core: Process = Res(x, ann, new_l, new_r)
    core_key = f"res({kl};{kr})"
    if commute:
        core, core_key = _commute_res(core, core_key, env)
    if out:
        return _normk(par(core, *out), env, commute)
    return core, core_key


def _commute_res(core: Process, core_key: str, env: dict[Name, str]) -> tuple[Process, str]:
    """Reorder independent nested restrictions toward the smaller key.
    Candidates are evaluated without further commutation; the enclosing
    canonicalization loop revisits the winner."""
    best, best_key = core, core_key
    for _ in range(_CANON_MAX_PASSES):
        if not isinstance(best, Res):
            break
        improved = False
        for cand in _commute_candidates(best):
            cand, k = _normk(cand, env, commute=False)
            if k < best_key:
                best, best_key = cand, k
                improved = True
        if not improved:
            break
    return best, best_key


def _commute_candidates(core: Res) -> Iterator[Process]:
    x, a = core.name, core.ann
    for flip in (False, True):
        if flip:
            inner, other = core.right, core.left
            a_or = dual(a) if a is not None else None
        else:
            inner, other = core.left, core.right
            a_or = a
        if not isinstance(inner, Res):
            continue
        y, b = inner.name, inner.ann
        if y in free_names(other):
            continue
        pl, pr = inner.left, inner.right
        if x not in free_names(pr) and x in free_names(pl):
            yield Res(y, b, Res(x, a_or, pl, other), pr)
        if x not in free_names(pl) and x in free_names(pr):
            b_or = dual(b) if b is not None else None
            yield Res(y, b_or, Res(x, a_or, pr, other), pl)


# ---------------------------------------------------------------------------
# prefixes and the compatibility relation


class Prefix:
    __slots__ = ()


@dataclass(frozen=True)
class SendPfx(Prefix):
    subj: Name
    obj: Name


@dataclass(frozen=True)
class RecvPfx(Prefix):
    subj: Name
    obj: Name


@dataclass(frozen=True)
class PickPfx(Prefix):
    subj: Name
    label: str


@dataclass(frozen=True)
class CasePfx(Prefix):
    subj: Name
    labels: frozenset[str]


@dataclass(frozen=True)
class ClosePfx(Prefix):
    subj: Name


@dataclass(frozen=True)
class WaitPfx(Prefix):
    subj: Name


@dataclass(frozen=True)
class AvailPfx(Prefix):
    subj: Name


@dataclass(frozen=True)
class UnavailPfx(Prefix):
    subj: Name


@dataclass(frozen=True)
class ExpectPfx(Prefix):
    subj: Name
    deps: frozenset[Name]


@dataclass(frozen=True)
class FwdPfx(Prefix):
    a: Name
    b: Name

    def __post_init__(self):
        if self.b.sort_key() < self.a.sort_key():
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class SendDataPfx(Prefix):
    subj: Name
    payload: Payload
    prim: str


@dataclass(frozen=True)
class RecvDataPfx(Prefix):
    subj: Name
    prim: str


def prefix_of(p: Process) -> Optional[Prefix]:
    """The topmost action of a prefix-headed process, if any."""
    if isinstance(p, Send):
        return SendPfx(p.subj, p.obj)
    if isinstance(p, Recv):
        return RecvPfx(p.subj, p.obj)
    if isinstance(p, Pick):
        return PickPfx(p.subj, p.label)
    if isinstance(p, Case):
        return CasePfx(p.subj, p.labels())
    if isinstance(p, Close):
        return ClosePfx(p.subj)
    if isinstance(p, Wait):
        return WaitPfx(p.subj)
    if isinstance(p, Avail):
        return AvailPfx(p.subj)
    if isinstance(p, Unavail):
        return UnavailPfx(p.subj)
    if isinstance(p, Expect):
        return ExpectPfx(p.subj, p.deps)
    if isinstance(p, Fwd):
        return FwdPfx(p.a, p.b)
    if isinstance(p, SendData):
        return SendDataPfx(p.subj, p.payload, p.prim)
    if isinstance(p, RecvData):
        return RecvDataPfx(p.subj, p.prim)
    return None


def subjects(pfx: Prefix) -> frozenset[Name]:
    if isinstance(pfx, FwdPfx):
        return frozenset((pfx.a, pfx.b))
    return frozenset((pfx.subj,))


def prefix_matchable(a: Prefix, b: Prefix) -> bool:
    """Compatibility of prefixes: sends with equal subject match, receives
    with equal subject match, anything else matches only itself.  Branch
    offers compare by subject alone; data prefixes by subject alone."""
    if isinstance(a, SendPfx) and isinstance(b, SendPfx):
        return a.subj == b.subj
    if isinstance(a, RecvPfx) and isinstance(b, RecvPfx):
        return a.subj == b.subj
    if isinstance(a, CasePfx) and isinstance(b, CasePfx):
        return a.subj == b.subj
    if isinstance(a, SendDataPfx) and isinstance(b, SendDataPfx):
        return a.subj == b.subj
    if isinstance(a, RecvDataPfx) and isinstance(b, RecvDataPfx):
        return a.subj == b.subj
    return a == b


def prefix_class(pfx: Prefix, x: Name):
    """Grouping key for prefixes on subject x: two located prefixes fall in
    the same class iff they are compatible.  None if x is not a subject."""
    if isinstance(pfx, FwdPfx):
        if x == pfx.a:
            return ("fwd", pfx.b)
        if x == pfx.b:
            return ("fwd", pfx.a)
        return None
    if subjects(pfx) != frozenset((x,)):
        return None
    if isinstance(pfx, SendPfx):
        return ("send",)
    if isinstance(pfx, RecvPfx):
        return ("recv",)
    if isinstance(pfx, PickPfx):
        return ("pick", pfx.label)
    if isinstance(pfx, CasePfx):
        return ("case",)
    if isinstance(pfx, ClosePfx):
        return ("close",)
    if isinstance(pfx, WaitPfx):
        return ("wait",)
    if isinstance(pfx, AvailPfx):
        return ("avail",)
    if isinstance(pfx, UnavailPfx):
        return ("unavail",)
    if isinstance(pfx, ExpectPfx):
        return ("expect", tuple(sorted(w.sort_key() for w in pfx.deps)))
    if isinstance(pfx, SendDataPfx):
        return ("dsend",)
    if isinstance(pfx, RecvDataPfx):
        return ("drecv",)
    return None


# ---------------------------------------------------------------------------
# one-hole contexts (no hole under a prefix; deterministic fragment has no
# hole under choice)


@dataclass(frozen=True)
class ParStep:
    before: tuple[Process, ...]
    after: tuple[Process, ...]


@dataclass(frozen=True)
class ResStep:
    name: Name
    ann: Optional[SessionType]
    other: Process
    hole_left: bool


@dataclass(frozen=True)
class DContext:
    steps: tuple = ()

    def plug(self, q: Process) -> Process:
        cur = q
        for step in reversed(self.steps):
            if isinstance(step, ParStep):
                cur = Par(step.before + (cur,) + step.after)
            else:
                if step.hole_left:
                    cur = Res(step.name, step.ann, cur, step.other)
                else:
                    cur = Res(step.name, step.ann, step.other, cur)
        return cur

    def binders(self) -> frozenset[Name]:
        return frozenset(s.name for s in self.steps if isinstance(s, ResStep))


EMPTY_CONTEXT = DContext()


def locate_prefixes(p: Process) -> Iterator[tuple[DContext, Process]]:
    """All unguarded prefix-headed subterms with their one-hole contexts.
    Does not cross a choice; flatten choices first."""

    def go(q: Process, steps: tuple) -> Iterator[tuple[DContext, Process]]:
        if prefix_of(q) is not None:
            yield DContext(steps), q
            return
        if isinstance(q, Par):
            for i, c in enumerate(q.parts):
                st = ParStep(q.parts[:i], q.parts[i + 1:])
                yield from go(c, steps + (st,))
        elif isinstance(q, Res):
            yield from go(q.left, steps + (ResStep(q.name, q.ann, q.right, True),))
            yield from go(q.right, steps + (ResStep(q.name, q.ann, q.left, False),))

    yield from go(p, ())


def hoist_branches(p: Process) -> list[Process]:
    """Distribute unguarded choices over their surrounding contexts: the
    result is the list of choice-free-spine alternatives whose recombination
    by choice is reduction-equivalent to p."""
    if isinstance(p, Alt):
        out: list[Process] = []
        for q in p.parts:
            out.extend(hoist_branches(q))
        return out
    if isinstance(p, Par):
        combos = [hoist_branches(q) for q in p.parts]
        return [par(*combo) for combo in itertools.product(*combos)]
    if isinstance(p, Res):
        lefts = hoist_branches(p.left)
        rights = hoist_branches(p.right)
        return [Res(p.name, p.ann, l, r) for l in lefts for r in rights]
    return [p]


# ---------------------------------------------------------------------------
# choice decomposition and the branch-discarding precongruence


def flatten_choice(p: Process) -> list[Process]:
    if isinstance(p, Alt):
        return list(p.parts)
    return [p]


def decompose_choice(
    p: Process, subject_set: frozenset[Name] | set[Name]
) -> list[tuple[DContext, Optional[Prefix], Process]]:
    """Split the top-level choice of p into branches and locate, per branch,
    the first unguarded prefix whose subjects meet subject_set.  Branches
    without one are reported with a None prefix and the branch itself as the
    residue."""
    subject_set = frozenset(subject_set)
    out = []
    for branch in flatten_choice(p):
        found = None
        for ctx, node in locate_prefixes(branch):
            pfx = prefix_of(node)
            if pfx is not None and subjects(pfx) & subject_set:
                found = (ctx, pfx, node)
                break
        if found is None:
            out.append((EMPTY_CONTEXT, None, branch))
        else:
            ctx, pfx, node = found
            out.append((ctx, pfx, _continuation_of(node)))
    return out


def _continuation_of(node: Process) -> Process:
    if isinstance(node, Send):
        return par(node.obj_side, node.cont_side)
    if isinstance(node, (Recv, Pick, Wait, Avail, Expect, SendData, RecvData)):
        return node.cont
    if isinstance(node, Case):
        return par(*[q for _, q in node.branches]) if node.branches else Inact()
    return Inact()


@dataclass(frozen=True)
class Located:
    """A branch together with one located unguarded prefix."""

    ctx: DContext
    node: Process
    pfx: Prefix


@dataclass(frozen=True)
class BranchGroup:
    """A maximal compatible group of located prefixes on one subject, with
    the count of alternatives that had to be discarded to isolate it."""

    cls: tuple
    members: tuple[Located, ...]
    discarded: int


def _locate_all(branch: Process) -> list[Located]:
    out = []
    for ctx, node in locate_prefixes(branch):
        pfx = prefix_of(node)
        if pfx is not None:
            out.append(Located(ctx, node, pfx))
    return out


def _discardable(located: list[Located], x: Name, cls: tuple) -> bool:
    # a discarded branch must hold some unguarded prefix that is incompatible
    # with the kept class and whose prefixed subterm still mentions x
    for loc in located:
        if prefix_class(loc.pfx, x) == cls:
            continue
        if x in free_names(loc.node):
            return True
    return False


def branch_groups(side: Process, x: Name) -> list[BranchGroup]:
    """Group the hoisted branches of one restriction component by compatible
    prefixes on x.  A group survives only if every branch outside it may be
    discarded by the precongruence."""
    branches = hoist_branches(side)
    located_per_branch = [_locate_all(b) for b in branches]
    classes: dict[tuple, list[Located]] = {}
    for locs in located_per_branch:
        per_branch: dict[tuple, Located] = {}
        for loc in locs:
            cls = prefix_class(loc.pfx, x)
            if cls is not None and cls not in per_branch:
                per_branch[cls] = loc
        for cls, loc in per_branch.items():
            classes.setdefault(cls, []).append(loc)
    groups = []
    for cls, members in sorted(classes.items(), key=lambda kv: repr(kv[0])):
        ok = True
        discarded = 0
        for locs in located_per_branch:
            in_group = any(prefix_class(loc.pfx, x) == cls for loc in locs)
            if in_group:
                continue
            if _discardable(locs, x, cls):
                discarded += 1
            else:
                ok = False
                break
        if ok:
            groups.append(BranchGroup(cls, tuple(members), discarded))
    return groups


def precongruence_reducts(p: Process, s: frozenset[Name] | set[Name]) -> set[Process]:
    """Every process reachable from p by discarding impossible branches of
    its top-level choice, for a synchronization on the subjects s."""
    s = frozenset(s)
    if not s or len(s) > 2:
        raise ValueError("subject set must have one or two names")
    branches = flatten_choice(p)
    located_per_branch = [_locate_all(b) for b in branches]

    if len(s) == 1:
        (x,) = s
        wanted = lambda cls: cls is not None and cls[0] != "fwd"
    else:
        x, y = sorted(s, key=Name.sort_key)
        wanted = lambda cls: cls == ("fwd", y)

    classes: dict[tuple, set[int]] = {}
    for i, locs in enumerate(located_per_branch):
        for loc in locs:
            cls = prefix_class(loc.pfx, x)
            if cls is not None and wanted(cls):
                classes.setdefault(cls, set()).add(i)

    out: set[Process] = set()
    seen_keys: set[str] = set()
    for cls, idxs in classes.items():
        ok = True
        for i, locs in enumerate(located_per_branch):
            if i in idxs:
                continue
            if not _discardable(locs, x, cls):
                ok = False
                break
        if not ok:
            continue
        q = alt(*[branches[i] for i in sorted(idxs)])
        k = struct_key(canonicalize(q))
        if k not in seen_keys:
            seen_keys.add(k)
            out.add(q)
    return out
