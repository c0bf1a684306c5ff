"""Linear session-type checking for pi processes.

Each subterm consumes a subset of the ambient context; composition rules
require their components' consumptions to partition the context, and choice
requires identical consumption across alternatives.  Only restrictions carry
type annotations; every other binder's type is derived from the context.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .process import (
    Alt,
    Avail,
    Case,
    Close,
    Expect,
    Fwd,
    Inact,
    Lit,
    Name,
    Ok,
    Par,
    Pick,
    Process,
    Recv,
    RecvData,
    Res,
    Send,
    SendData,
    Unavail,
    Wait,
    all_names,
    barendregt,
    free_names,
    struct_congruent,
    substitute,
)
from .sestypes import (
    Bot,
    MayConsume,
    MayProvide,
    Offer,
    One,
    Parr,
    Prim,
    Select,
    SessionType,
    Tensor,
    dual,
    type_to_str,
)


class PiTypeError(Exception):
    def __init__(self, message: str, path: tuple[str, ...] = (), rule: str = ""):
        self.message = message
        self.path = path
        self.rule = rule
        loc = "/".join(path) if path else "root"
        super().__init__(f"{message} (rule {rule or '?'}, at {loc})")


@dataclass(frozen=True)
class Derivation:
    rule: str
    consumed: frozenset[Name]
    children: tuple["Derivation", ...] = ()


def _fresh_binders(p: Process, avoid: frozenset[Name]) -> Process:
    clashes = all_names(p) & avoid
    q = p
    for n in sorted(clashes, key=Name.sort_key):
        # only bound occurrences need renaming; free ones refer to the context
        if n in free_names(q):
            continue
        q = _rename_binder_everywhere(q, n, avoid | all_names(q))
    return barendregt(q)


def _rename_binder_everywhere(p: Process, n: Name, used) -> Process:
    from .process import fresh_name

    fresh = fresh_name(n.token, set(used))
    # substitute under each binder occurrence by rebuilding via barendregt-style
    # pass; reuse substitute on the binder scope
    def go(q: Process) -> Process:
        if isinstance(q, Res) and q.name == n:
            return Res(fresh, q.ann, go(substitute(q.left, n, fresh)), go(substitute(q.right, n, fresh)))
        if isinstance(q, Send) and q.obj == n:
            return Send(q.subj, fresh, go(substitute(q.obj_side, n, fresh)), go(substitute(q.cont_side, n, fresh)))
        if isinstance(q, Recv) and q.obj == n:
            return Recv(q.subj, fresh, go(substitute(q.cont, n, fresh)))
        if isinstance(q, RecvData) and q.var == n:
            return RecvData(q.subj, fresh, q.prim, go(substitute(q.cont, n, fresh)))
        if isinstance(q, (Inact, Ok, Fwd, Close, Unavail)):
            return q
        if isinstance(q, Res):
            return Res(q.name, q.ann, go(q.left), go(q.right))
        if isinstance(q, Par):
            return Par(tuple(go(c) for c in q.parts))
        if isinstance(q, Alt):
            return Alt(tuple(go(c) for c in q.parts))
        if isinstance(q, Send):
            return Send(q.subj, q.obj, go(q.obj_side), go(q.cont_side))
        if isinstance(q, Recv):
            return Recv(q.subj, q.obj, go(q.cont))
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
            return RecvData(q.subj, q.var, q.prim, go(q.cont))
        raise TypeError(f"not a process: {q!r}")

    return go(p)


def check(p: Process, ctx: dict[Name, SessionType]) -> Derivation:
    """Derivation of p against ctx, or PiTypeError."""
    q = _fresh_binders(p, frozenset(ctx))
    consumed, deriv = _chk(q, dict(ctx), frozenset(), ())
    leftover = set(ctx) - set(consumed)
    if leftover:
        names = ", ".join(sorted(str(n) for n in leftover))
        raise PiTypeError(f"unused linear name(s): {names}", (), "root")
    return deriv


def _need(avail: dict, x: Name, path, rule) -> SessionType:
    if x not in avail:
        raise PiTypeError(f"name {x} not available in context", path, rule)
    return avail[x]


def _sub(avail: dict, drop: frozenset[Name]) -> dict:
    return {k: v for k, v in avail.items() if k not in drop}


def _chk(
    p: Process, avail: dict, dscope: frozenset[Name], path: tuple[str, ...]
) -> tuple[frozenset[Name], Derivation]:
    if isinstance(p, Inact):
        return frozenset(), Derivation("empty", frozenset())
    if isinstance(p, Ok):
        return frozenset(), Derivation("ok", frozenset())
    if isinstance(p, Fwd):
        ta = _need(avail, p.a, path, "id")
        tb = _need(avail, p.b, path, "id")
        if tb != dual(ta):
            raise PiTypeError(
                f"forwarder endpoints not dual: {type_to_str(ta)} vs {type_to_str(tb)}",
                path,
                "id",
            )
        c = frozenset((p.a, p.b))
        return c, Derivation("id", c)
    if isinstance(p, Res):
        if p.ann is None:
            raise PiTypeError(f"restriction on {p.name} lacks a type annotation", path, "cut")
        if p.name in avail:
            raise PiTypeError(f"duplicate name {p.name}", path, "cut")
        avail_l = dict(avail)
        avail_l[p.name] = p.ann
        cl, dl = _chk(p.left, avail_l, dscope, path + ("res-left",))
        if p.name not in cl:
            raise PiTypeError(f"bound name {p.name} unused in left component", path, "cut")
        avail_r = _sub(avail, cl - {p.name})
        avail_r[p.name] = dual(p.ann)
        cr, dr = _chk(p.right, avail_r, dscope, path + ("res-right",))
        if p.name not in cr:
            raise PiTypeError(f"bound name {p.name} unused in right component", path, "cut")
        return (cl | cr) - {p.name}, Derivation("cut", (cl | cr) - {p.name}, (dl, dr))
    if isinstance(p, Par):
        remaining = dict(avail)
        consumed: frozenset[Name] = frozenset()
        kids = []
        for i, part in enumerate(p.parts):
            ci, di = _chk(part, remaining, dscope, path + (f"par[{i}]",))
            remaining = _sub(remaining, ci)
            consumed |= ci
            kids.append(di)
        return consumed, Derivation("mix", consumed, tuple(kids))
    if isinstance(p, Alt):
        c0, d0 = _chk(p.parts[0], avail, dscope, path + ("alt[0]",))
        kids = [d0]
        for i, part in enumerate(p.parts[1:], start=1):
            ci, di = _chk(part, avail, dscope, path + (f"alt[{i}]",))
            if ci != c0:
                raise PiTypeError(
                    "choice alternatives consume different sessions", path, "choice"
                )
            kids.append(di)
        return c0, Derivation("choice", c0, tuple(kids))
    if isinstance(p, Send):
        tx = _need(avail, p.subj, path, "tensor")
        if not isinstance(tx, Tensor):
            raise PiTypeError(
                f"send on {p.subj} needs an output type, got {type_to_str(tx)}", path, "tensor"
            )
        avail_p = _sub(avail, frozenset((p.subj,)))
        avail_p[p.obj] = tx.left
        cp, dp = _chk(p.obj_side, avail_p, dscope, path + ("send-obj",))
        if p.obj not in cp:
            raise PiTypeError(f"sent name {p.obj} unused", path, "tensor")
        avail_q = _sub(avail, (cp - {p.obj}) | {p.subj})
        avail_q[p.subj] = tx.right
        cq, dq = _chk(p.cont_side, avail_q, dscope, path + ("send-cont",))
        if p.subj not in cq:
            raise PiTypeError(f"subject {p.subj} unused after send", path, "tensor")
        return (cp - {p.obj}) | cq, Derivation("tensor", (cp - {p.obj}) | cq, (dp, dq))
    if isinstance(p, Recv):
        tx = _need(avail, p.subj, path, "parr")
        if not isinstance(tx, Parr):
            raise PiTypeError(
                f"receive on {p.subj} needs an input type, got {type_to_str(tx)}", path, "parr"
            )
        avail_p = dict(avail)
        avail_p[p.subj] = tx.right
        avail_p[p.obj] = tx.left
        cp, dp = _chk(p.cont, avail_p, dscope, path + ("recv",))
        if p.obj not in cp:
            raise PiTypeError(f"received name {p.obj} unused", path, "parr")
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after receive", path, "parr")
        return cp - {p.obj}, Derivation("parr", cp - {p.obj}, (dp,))
    if isinstance(p, Pick):
        tx = _need(avail, p.subj, path, "select")
        if not isinstance(tx, Select):
            raise PiTypeError(
                f"label pick on {p.subj} needs an internal choice type, got {type_to_str(tx)}",
                path,
                "select",
            )
        if p.label not in tx.labels():
            raise PiTypeError(f"unknown label {p.label}", path, "select")
        avail_p = dict(avail)
        avail_p[p.subj] = tx.branch(p.label)
        cp, dp = _chk(p.cont, avail_p, dscope, path + (f"pick.{p.label}",))
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after pick", path, "select")
        return cp, Derivation("select", cp, (dp,))
    if isinstance(p, Case):
        tx = _need(avail, p.subj, path, "branch")
        if not isinstance(tx, Offer):
            raise PiTypeError(
                f"case on {p.subj} needs an external choice type, got {type_to_str(tx)}",
                path,
                "branch",
            )
        if frozenset(tx.labels()) != p.labels():
            raise PiTypeError("case labels differ from offered labels", path, "branch")
        consumed = None
        kids = []
        for lbl, q in p.branches:
            avail_b = dict(avail)
            avail_b[p.subj] = tx.branch(lbl)
            cb, db = _chk(q, avail_b, dscope, path + (f"case.{lbl}",))
            if p.subj not in cb:
                raise PiTypeError(f"subject {p.subj} unused in case branch {lbl}", path, "branch")
            if consumed is None:
                consumed = cb
            elif cb != consumed:
                raise PiTypeError("case branches consume different sessions", path, "branch")
            kids.append(db)
        return consumed, Derivation("branch", consumed, tuple(kids))
    if isinstance(p, Close):
        tx = _need(avail, p.subj, path, "one")
        if not isinstance(tx, One):
            raise PiTypeError(
                f"close on {p.subj} needs the unit type, got {type_to_str(tx)}", path, "one"
            )
        return frozenset((p.subj,)), Derivation("one", frozenset((p.subj,)))
    if isinstance(p, Wait):
        tx = _need(avail, p.subj, path, "bot")
        if not isinstance(tx, Bot):
            raise PiTypeError(
                f"wait on {p.subj} needs the dual unit type, got {type_to_str(tx)}", path, "bot"
            )
        cp, dp = _chk(p.cont, _sub(avail, frozenset((p.subj,))), dscope, path + ("wait",))
        return cp | {p.subj}, Derivation("bot", cp | {p.subj}, (dp,))
    if isinstance(p, Avail):
        tx = _need(avail, p.subj, path, "provide-some")
        if not isinstance(tx, MayProvide):
            raise PiTypeError(
                f"availability on {p.subj} needs a may-provide type, got {type_to_str(tx)}",
                path,
                "provide-some",
            )
        avail_p = dict(avail)
        avail_p[p.subj] = tx.inner
        cp, dp = _chk(p.cont, avail_p, dscope, path + ("avail",))
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after availability", path, "provide-some")
        return cp, Derivation("provide-some", cp, (dp,))
    if isinstance(p, Unavail):
        tx = _need(avail, p.subj, path, "provide-none")
        if not isinstance(tx, MayProvide):
            raise PiTypeError(
                f"failure signal on {p.subj} needs a may-provide type, got {type_to_str(tx)}",
                path,
                "provide-none",
            )
        return frozenset((p.subj,)), Derivation("provide-none", frozenset((p.subj,)))
    if isinstance(p, Expect):
        tx = _need(avail, p.subj, path, "consume-some")
        if not isinstance(tx, MayConsume):
            raise PiTypeError(
                f"expectation on {p.subj} needs a may-consume type, got {type_to_str(tx)}",
                path,
                "consume-some",
            )
        avail_p = dict(avail)
        avail_p[p.subj] = tx.inner
        cp, dp = _chk(p.cont, avail_p, dscope, path + ("expect",))
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after expectation", path, "consume-some")
        deps = cp - {p.subj}
        if deps != p.deps:
            got = ", ".join(sorted(str(n) for n in p.deps))
            need = ", ".join(sorted(str(n) for n in deps))
            raise PiTypeError(
                f"expectation dependencies [{got}] differ from used sessions [{need}]",
                path,
                "consume-some",
            )
        for w in sorted(deps, key=Name.sort_key):
            if not isinstance(avail.get(w), MayProvide):
                raise PiTypeError(
                    f"dependency {w} is not of may-provide shape", path, "consume-some"
                )
        return cp, Derivation("consume-some", cp, (dp,))
    if isinstance(p, SendData):
        tx = _need(avail, p.subj, path, "data-send")
        if not (isinstance(tx, Tensor) and isinstance(tx.left, Prim) and tx.left.name == p.prim):
            raise PiTypeError(
                f"data send on {p.subj} needs #{p.prim} * B, got {type_to_str(tx)}",
                path,
                "data-send",
            )
        if isinstance(p.payload, Name) and p.payload not in dscope:
            raise PiTypeError(f"unbound data variable {p.payload}", path, "data-send")
        avail_p = dict(avail)
        avail_p[p.subj] = tx.right
        cp, dp = _chk(p.cont, avail_p, dscope, path + ("data-send",))
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after data send", path, "data-send")
        return cp, Derivation("data-send", cp, (dp,))
    if isinstance(p, RecvData):
        tx = _need(avail, p.subj, path, "data-recv")
        if not (isinstance(tx, Parr) and isinstance(tx.left, Prim) and tx.left.name == p.prim):
            raise PiTypeError(
                f"data receive on {p.subj} needs #{p.prim} % B, got {type_to_str(tx)}",
                path,
                "data-recv",
            )
        avail_p = dict(avail)
        avail_p[p.subj] = tx.right
        cp, dp = _chk(p.cont, avail_p, dscope | {p.var}, path + ("data-recv",))
        if p.subj not in cp:
            raise PiTypeError(f"subject {p.subj} unused after data receive", path, "data-recv")
        return cp, Derivation("data-recv", cp, (dp,))
    raise TypeError(f"not a process: {p!r}")


@dataclass
class Verdict:
    ok: bool
    detail: str = ""
    witness: list = field(default_factory=list)


def check_deadlock_freedom(p: Process) -> Verdict:
    """Witness that a single well-typed closed state is inactive or can step."""
    from .reduction import reducts_list

    if struct_congruent(p, Inact()):
        return Verdict(True, "structurally congruent to the inactive process")
    steps = reducts_list(p)
    if steps:
        label = steps[0][0]
        return Verdict(True, f"can reduce via {label}", [label])
    return Verdict(False, "stuck state not congruent to the inactive process")
