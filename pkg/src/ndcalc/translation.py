"""Translation of the resource lambda calculus into the session pi calculus.

Every lambda variable becomes a channel; the root channel provides the
term's behavior as a nondeterministically available session.  Bags become
chained providers guarded by availability confirmations, explicit
substitutions become a choice over all assignments of fresh channels to
the substituted variables, and sharing becomes a choice over which alias to
receive next.  Failure maps to unavailability signals on the root and on
every dangling variable.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .itypes import Arrow, MultisetType, OkT, OMEGA, StrictType, UnitT, multi
from .lam_typing import LamContext, _syn
from .process import (
    Avail,
    Close,
    Expect,
    Fwd,
    Inact,
    Name,
    Ok,
    Par,
    Process,
    Recv,
    Res,
    Send,
    Unavail,
    Wait,
    alt,
    par,
    substitute,
)
from .sestypes import (
    MayConsume,
    MayProvide,
    One,
    Parr,
    Prim,
    SessionType,
    Tensor,
    dual,
)
from .terms import (
    Abs,
    App,
    Bag,
    ExplSub,
    Fail,
    InterSub,
    Okay,
    Sharing,
    Term,
    Var,
    bag_fv,
    fv,
)


@dataclass
class FreshNamePolicy:
    """Deterministic source of fresh channel names.  Generated names carry a
    freshness tag, so they can never collide with source-term variables."""

    counter: int = 0

    def fresh(self, role: str) -> Name:
        self.counter += 1
        return Name(role, self.counter)


def _names(vs) -> frozenset[Name]:
    return frozenset(Name(v) for v in sorted(vs))


def translate_term(m: Term, u: Name, policy: Optional[FreshNamePolicy] = None) -> Process:
    """Process image of a validated term, rooted at u.  Pure given a policy;
    restrictions carry no annotations."""
    pol = policy if policy is not None else FreshNamePolicy()
    return _tr(m, u, pol, None, None, 0)


def translate_typed(
    ctx: LamContext,
    m: Term,
    ty: StrictType,
    u: Name,
    omega_index: int = 0,
    policy: Optional[FreshNamePolicy] = None,
) -> Process:
    """Like translate_term but annotates every restriction from the typing,
    unwinding empty multisets omega_index levels deep."""
    pol = policy if policy is not None else FreshNamePolicy()
    return _tr(m, u, pol, dict(ctx), ty, omega_index)


def _slice(env: Optional[LamContext], vs) -> Optional[LamContext]:
    if env is None:
        return None
    return {x: t for x, t in env.items() if x in vs}


def _tr(
    m: Term,
    u: Name,
    pol: FreshNamePolicy,
    env: Optional[LamContext],
    ty: Optional[StrictType],
    idx: int,
) -> Process:
    if isinstance(m, Var):
        x = Name(m.name)
        return Avail(x, Fwd(x, u))

    if isinstance(m, Okay):
        return Ok()

    if isinstance(m, Fail):
        parts = [Unavail(u)] + [Unavail(Name(x)) for x in sorted(m.fvs)]
        return par(*parts)

    if isinstance(m, Abs):
        x = Name(m.var)
        body_env = None
        body_ty = None
        if env is not None and isinstance(ty, Arrow):
            body_env = dict(env)
            body_env[m.var] = ty.dom
            body_ty = ty.cod
        return Avail(u, Recv(u, x, _tr(m.body, u, pol, body_env, body_ty, idx)))

    if isinstance(m, App):
        v = pol.fresh("v")
        xo = pol.fresh("x")
        ann_v = None
        fun_env = _slice(env, fv(m.fun))
        bag_env = _slice(env, bag_fv(m.bag))
        fun_ty = None
        if env is not None:
            fun_ty = _syn(m.fun, fun_env or {}, False, ())
            if isinstance(fun_ty, Arrow):
                ann_v = translate_type(fun_ty, idx)
        deps = _names(bag_fv(m.bag)) | {u}
        fun_proc = _tr(m.fun, v, pol, fun_env, fun_ty, idx)
        sigma = fun_ty.dom.base if isinstance(fun_ty, Arrow) else None
        bag_proc = _tr_bag(m.bag, xo, pol, bag_env, sigma, idx)
        return Res(
            v,
            ann_v,
            fun_proc,
            Expect(v, deps, Send(v, xo, bag_proc, Fwd(v, u))),
        )

    if isinstance(m, InterSub):
        x = Name(m.var)
        sigma = m.ann.base if (m.ann is not None and m.ann.base is not None) else None
        body_env = _slice(env, fv(m.body) - {m.var})
        bag_env = _slice(env, bag_fv(m.bag))
        if sigma is None and env is not None:
            sigma = _syn_bag_elem(m.bag, bag_env)
        ann_x = None
        j = len(m.body.aliases) if isinstance(m.body, Sharing) else 0
        if env is not None and sigma is not None:
            ann_x = dual(translate_multiset(multi(sigma, j), (sigma, idx)))
        if body_env is not None and sigma is not None:
            body_env = dict(body_env)
            body_env[m.var] = multi(sigma, j)
        body_proc = _tr(m.body, u, pol, body_env, ty, idx)
        bag_proc = _tr_bag(m.bag, x, pol, bag_env, sigma, idx)
        return Res(x, ann_x, body_proc, bag_proc)

    if isinstance(m, ExplSub):
        zs = [pol.fresh("z") for _ in m.aliases]
        sigma = m.ann
        bag_env = _slice(env, bag_fv(m.bag))
        if sigma is None and env is not None:
            sigma = _syn_bag_elem(m.bag, bag_env)
        body_env = None
        if env is not None and sigma is not None:
            body_env = _slice(env, fv(m.body) - set(m.aliases))
            for a in m.aliases:
                body_env[a] = sigma
        body_proc = _tr(m.body, u, pol, body_env, ty, idx)
        branches = []
        for perm in itertools.permutations(m.aliases):
            q = body_proc
            for z, a in zip(zs, perm):
                q = substitute(q, Name(a), z)
            branches.append(q)
        core: Process = alt(*branches)
        ann_z = None
        if env is not None and sigma is not None:
            ann_z = MayConsume(translate_type(sigma, idx))
        for z, item in zip(reversed(zs), reversed(m.bag.items)):
            item_env = _slice(env, fv(item))
            guard = Expect(z, _names(fv(item)), _tr(item, z, pol, item_env, sigma, idx))
            core = Res(z, ann_z, guard, core)
        return core

    if isinstance(m, Sharing):
        x = Name(m.var)
        y = pol.fresh("y")
        if not m.aliases:
            deps = _names(fv(m.body)) | {u}
            body_env = _slice(env, fv(m.body))
            body = _tr(m.body, u, pol, body_env, ty, idx)
            return Avail(x, Send(x, y, Expect(y, deps, Wait(y, body)), Unavail(x)))
        deps = (_names(fv(m.body)) - _names(m.aliases)) | {u}
        recv_branches = []
        for a in m.aliases:
            rest = tuple(b for b in m.aliases if b != a)
            inner = Sharing(m.body, rest, m.var)
            inner_env = None
            if env is not None:
                inner_env = _slice(env, fv(inner) - {m.var})
                t = env.get(m.var)
                if isinstance(t, MultisetType) and t.count == len(m.aliases):
                    inner_env[m.var] = multi(t.base, t.count - 1)
                    inner_env[a] = t.base
                elif t is not None:
                    inner_env[m.var] = t
            recv_branches.append(Recv(x, Name(a), _tr(inner, u, pol, inner_env, ty, idx)))
        return Avail(
            x,
            Send(
                x,
                y,
                Expect(y, frozenset(), Wait(y, Inact())),
                Avail(x, Expect(x, deps, alt(*recv_branches))),
            ),
        )

    raise TypeError(f"not a term: {m!r}")


def _syn_bag_elem(c: Bag, env: Optional[LamContext]) -> Optional[StrictType]:
    if env is None:
        return None
    for n in c.items:
        t = _syn(n, {x: e for x, e in env.items() if x in fv(n)}, False, ())
        if t is not None:
            return t
    return UnitT()


def _tr_bag(
    c: Bag,
    x: Name,
    pol: FreshNamePolicy,
    env: Optional[LamContext],
    sigma: Optional[StrictType],
    idx: int,
) -> Process:
    if not c.items:
        yn = pol.fresh("y")
        return Expect(
            x,
            frozenset(),
            Recv(x, yn, par(Avail(yn, Close(yn)), Expect(x, frozenset(), Unavail(x)))),
        )
    head_item, rest = c.items[0], Bag(c.items[1:])
    y = pol.fresh("y")
    z = pol.fresh("z")
    deps1 = _names(bag_fv(rest)) | _names(fv(head_item))
    deps2 = deps1 | {y}
    item_env = _slice(env, fv(head_item))
    rest_env = _slice(env, bag_fv(rest))
    elem = Expect(z, _names(fv(head_item)), _tr(head_item, z, pol, item_env, sigma, idx))
    return Expect(
        x,
        deps1,
        Recv(
            x,
            y,
            Expect(
                x,
                deps2,
                Avail(x, Send(x, z, elem, par(_tr_bag(rest, x, pol, rest_env, sigma, idx), Unavail(y)))),
            ),
        ),
    )


# ---------------------------------------------------------------------------
# type translation


def translate_type(t: StrictType, omega_index: int = 0) -> SessionType:
    """Session-type image of a strict type."""
    if isinstance(t, UnitT):
        return MayProvide(One())
    if isinstance(t, OkT):
        return MayProvide(Prim("Ok"))
    if isinstance(t, Arrow):
        anchor = t.dom.base if t.dom.base is not None else UnitT()
        return MayProvide(
            Parr(
                dual(translate_multiset(t.dom, (anchor, omega_index))),
                translate_type(t.cod, omega_index),
            )
        )
    raise TypeError(f"not a strict type: {t!r}")


def translate_multiset(pi: MultisetType, anchor: tuple[StrictType, int]) -> SessionType:
    """Session-type image of a multiset type; the anchor supplies the base
    type and unwinding depth for the empty tail."""
    sigma, idx = anchor
    omega_idx = idx if idx >= 0 else 0
    if pi.is_empty():
        if omega_idx == 0:
            return MayConsume(Parr(MayProvide(One()), MayConsume(MayProvide(One()))))
        tail = translate_multiset(OMEGA, (sigma, omega_idx - 1))
        return MayConsume(
            Parr(
                MayProvide(One()),
                MayConsume(
                    MayProvide(
                        Tensor(MayConsume(translate_type(sigma, omega_idx)), tail)
                    )
                ),
            )
        )
    rest = multi(pi.base, pi.count - 1)
    return MayConsume(
        Parr(
            MayProvide(One()),
            MayConsume(
                MayProvide(
                    Tensor(
                        MayConsume(translate_type(pi.base, omega_idx)),
                        translate_multiset(rest, (sigma, omega_idx)),
                    )
                )
            ),
        )
    )


def translate_context(ctx: LamContext, omega_index: int = 0) -> dict[Name, SessionType]:
    """Typing-context image: strict assignments become may-provide duals,
    multiset assignments become duals of the multiset image."""
    out: dict[Name, SessionType] = {}
    for x, t in ctx.items():
        if isinstance(t, MultisetType):
            anchor = t.base if t.base is not None else UnitT()
            out[Name(x)] = dual(translate_multiset(t, (anchor, omega_index)))
        else:
            out[Name(x)] = MayProvide(dual(translate_type(t, omega_index)))
    return out
