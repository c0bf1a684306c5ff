"""Intersection-type checking for the resource lambda calculus.

Two systems share one engine: well-formedness tolerates failure terms and
mismatches between resource counts and variable multiplicities, while
well-typedness rejects failure and demands exact counts.  Contexts are
exact: every assignment must be consumed by the subterm it is split to.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .itypes import Arrow, MultisetType, OkT, OMEGA, StrictType, UnitT, multi, multi_to_str, strict_to_str
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
    fresh_var,
    fv,
    all_vars,
    subst,
)

# Negative-control switch: the failure rule's requirement that the context
# core coincide with the recorded dangling variables.
ENABLE_FAIL_CORE_CHECK = True

Entry = Union[StrictType, MultisetType]
LamContext = dict[str, Entry]


class LamTypeError(Exception):
    def __init__(self, message: str, path: tuple[str, ...] = (), rule: str = ""):
        self.message = message
        self.path = path
        self.rule = rule
        loc = "/".join(path) if path else "root"
        super().__init__(f"{message} (rule {rule or '?'}, at {loc})")


@dataclass(frozen=True)
class LamDerivation:
    rule: str
    ty: object
    children: tuple["LamDerivation", ...] = ()


def core(ctx: LamContext) -> LamContext:
    """Assignments whose type is not the empty multiset."""
    return {
        x: t
        for x, t in ctx.items()
        if not (isinstance(t, MultisetType) and t.is_empty())
    }


def entry_to_str(e: Entry) -> str:
    return multi_to_str(e) if isinstance(e, MultisetType) else strict_to_str(e)


def check_wf(ctx: LamContext, m: Union[Term, Bag], ty) -> LamDerivation:
    """Well-formedness: failure is typable, counts may mismatch."""
    return _check_top(ctx, m, ty, wt=False)


def check_wt(ctx: LamContext, m: Union[Term, Bag], ty) -> LamDerivation:
    """Well-typedness: failure is rejected and counts must agree."""
    return _check_top(ctx, m, ty, wt=True)


def _check_top(ctx, m, ty, wt: bool) -> LamDerivation:
    if isinstance(m, Bag):
        if not isinstance(ty, MultisetType):
            raise LamTypeError("a bag needs a multiset type", (), _r(wt, "bag"))
        return _check_bag(m, dict(ctx), ty, wt, ())
    if not isinstance(ty, StrictType):
        raise LamTypeError("a term needs a strict type", (), _r(wt, "var"))
    return _check(m, dict(ctx), ty, wt, ())


def _r(wt: bool, rule: str) -> str:
    return f"{'TS' if wt else 'FS'}:{rule}"


def _split(env: LamContext, fvsets: list[frozenset[str]], wt: bool, path, rule):
    parts: list[LamContext] = [{} for _ in fvsets]
    for x, t in env.items():
        hits = [i for i, s in enumerate(fvsets) if x in s]
        if not hits:
            raise LamTypeError(f"assignment for {x} is not consumed", path, _r(wt, rule))
        if len(hits) > 1:
            raise LamTypeError(f"variable {x} used in several components", path, _r(wt, rule))
        parts[hits[0]][x] = t
    for i, s in enumerate(fvsets):
        missing = s - set(parts[i])
        if missing:
            names = ", ".join(sorted(missing))
            raise LamTypeError(f"no assignment for {names}", path, _r(wt, rule))
    return parts


def _syn(m: Term, env: LamContext, wt: bool, path) -> Optional[StrictType]:
    """Best-effort type synthesis, used for applicands and bag elements."""
    if isinstance(m, Var):
        t = env.get(m.name)
        return t if isinstance(t, StrictType) else None
    if isinstance(m, Okay):
        return OkT()
    if isinstance(m, Fail):
        return m.ann
    if isinstance(m, Abs):
        if m.ann is None:
            return None
        env2 = dict(env)
        if isinstance(m.body, Sharing) and m.body.var == m.var:
            env2 = {x: t for x, t in env.items() if x in fv(m.body) - {m.var}}
            env2[m.var] = m.ann
            codty = _syn_under_sharing(m.body, env2, wt, path)
            if codty is None:
                return None
            return Arrow(m.ann, codty)
        return None
    if isinstance(m, App):
        ft = _syn(m.fun, {x: t for x, t in env.items() if x in fv(m.fun)}, wt, path)
        if isinstance(ft, Arrow):
            return ft.cod
        return None
    if isinstance(m, Sharing):
        return _syn_under_sharing(m, env, wt, path)
    if isinstance(m, (InterSub, ExplSub)):
        inner_env = {x: t for x, t in env.items() if x in fv(m.body)}
        if isinstance(m, InterSub) and isinstance(m.body, Sharing) and m.body.var == m.var:
            if m.ann is not None:
                inner_env = dict(inner_env)
                inner_env[m.var] = multi(m.ann.base, len(m.body.aliases)) if m.ann.base else OMEGA
                return _syn_under_sharing(m.body, inner_env, wt, path)
            return None
        if isinstance(m, ExplSub) and m.ann is not None:
            inner_env = {x: t for x, t in env.items() if x in fv(m.body) - set(m.aliases)}
            for a in m.aliases:
                inner_env[a] = m.ann
            return _syn(m.body, inner_env, wt, path)
        return None
    return None


def _syn_under_sharing(m: Sharing, env: LamContext, wt: bool, path) -> Optional[StrictType]:
    t = env.get(m.var)
    if not isinstance(t, MultisetType):
        return None
    env2 = {x: e for x, e in env.items() if x != m.var}
    if t.count != len(m.aliases):
        return None
    for a in m.aliases:
        env2[a] = t.base
    return _syn(m.body, env2, wt, path)


def _check(m: Term, env: LamContext, ty: StrictType, wt: bool, path) -> LamDerivation:
    if isinstance(m, Var):
        extra = set(env) - {m.name}
        if extra:
            names = ", ".join(sorted(extra))
            raise LamTypeError(f"assignment for {names} is not consumed", path, _r(wt, "var"))
        t = env.get(m.name)
        if t is None:
            raise LamTypeError(f"no assignment for {m.name}", path, _r(wt, "var"))
        if not isinstance(t, StrictType):
            raise LamTypeError(
                f"{m.name} carries multiset type {entry_to_str(t)}, expected a strict assignment",
                path,
                _r(wt, "var"),
            )
        if t != ty:
            raise LamTypeError(
                f"{m.name}: {strict_to_str(t)} does not match expected {strict_to_str(ty)}",
                path,
                _r(wt, "var"),
            )
        return LamDerivation(_r(wt, "var"), ty)

    if isinstance(m, Okay):
        if env:
            raise LamTypeError("success marker consumes nothing", path, _r(wt, "ok"))
        if not isinstance(ty, OkT):
            raise LamTypeError(
                f"success marker has type ok, expected {strict_to_str(ty)}", path, _r(wt, "ok")
            )
        return LamDerivation(_r(wt, "ok"), ty)

    if isinstance(m, Fail):
        if wt:
            raise LamTypeError("failure is never well-typed", path, "TS:fail")
        if ENABLE_FAIL_CORE_CHECK:
            cdom = set(core(env))
            if set(env) != cdom:
                names = ", ".join(sorted(set(env) - cdom))
                raise LamTypeError(
                    f"failure context carries empty-multiset entries: {names}", path, "FS:fail"
                )
            if cdom != set(m.fvs):
                raise LamTypeError(
                    f"failure records [{', '.join(sorted(m.fvs))}] but context core is "
                    f"[{', '.join(sorted(cdom))}]",
                    path,
                    "FS:fail",
                )
        if m.ann is not None and m.ann != ty:
            raise LamTypeError("failure annotation disagrees with expected type", path, "FS:fail")
        return LamDerivation("FS:fail", ty)

    if isinstance(m, Abs):
        if not isinstance(ty, Arrow):
            raise LamTypeError(
                f"abstraction cannot have type {strict_to_str(ty)}", path, _r(wt, "abs-sh")
            )
        if m.ann is not None and m.ann != ty.dom:
            raise LamTypeError(
                f"binder annotation {multi_to_str(m.ann)} differs from domain "
                f"{multi_to_str(ty.dom)}",
                path,
                _r(wt, "abs-sh"),
            )
        if not (isinstance(m.body, Sharing) and m.body.var == m.var):
            raise LamTypeError("abstraction body must share its binder", path, _r(wt, "abs-sh"))
        var, body = m.var, m.body
        if var in env:
            v2 = fresh_var(var, set(all_vars(m)) | set(env))
            body = subst(Sharing(body.body, body.aliases, var), var, Var(v2))
            var = v2
        env2 = dict(env)
        env2[var] = ty.dom
        child = _check(body, env2, ty.cod, wt, path + ("abs",))
        return LamDerivation(_r(wt, "abs-sh"), ty, (child,))

    if isinstance(m, App):
        fun_fv, bag_fvs = fv(m.fun), bag_fv(m.bag)
        env_f, env_c = _split(env, [fun_fv, bag_fvs], wt, path, "app")
        ft = _syn(m.fun, env_f, wt, path)
        k = m.bag.size()
        if ft is None and isinstance(m.fun, Fail):
            # an unannotated failure applicand accepts any argument type
            sigma = _syn_bag_base(m.bag, env_c, wt, path)
            dfun = _check(m.fun, env_f, Arrow(multi(sigma, k) if k else OMEGA, ty), wt,
                          path + ("fun",))
            dbag = _check_bag(m.bag, env_c, multi(sigma, k), wt, path + ("bag",))
            return LamDerivation(_r(wt, "app"), ty, (dfun, dbag))
        if not isinstance(ft, Arrow):
            got = "nothing synthesizable" if ft is None else strict_to_str(ft)
            raise LamTypeError(f"applicand is not a function: {got}", path, _r(wt, "app"))
        if ft.cod != ty:
            raise LamTypeError(
                f"application produces {strict_to_str(ft.cod)}, expected {strict_to_str(ty)}",
                path,
                _r(wt, "app"),
            )
        j = ft.dom.count
        if wt and j != k:
            raise LamTypeError(
                f"function expects {j} resources, bag holds {k}", path, "TS:app"
            )
        sigma = ft.dom.base if ft.dom.base is not None else _syn_bag_base(m.bag, env_c, wt, path)
        dfun = _check(m.fun, env_f, ft, wt, path + ("fun",))
        dbag = _check_bag(m.bag, env_c, multi(sigma, k), wt, path + ("bag",))
        return LamDerivation(_r(wt, "app"), ty, (dfun, dbag))

    if isinstance(m, Sharing):
        t = env.get(m.var)
        if t is None:
            raise LamTypeError(f"no assignment for sharing variable {m.var}", path, _r(wt, "shar"))
        if not isinstance(t, MultisetType):
            raise LamTypeError(
                f"sharing variable {m.var} carries strict type {entry_to_str(t)}, "
                "expected a multiset assignment",
                path,
                _r(wt, "shar"),
            )
        if not m.aliases:
            if not t.is_empty():
                raise LamTypeError(
                    f"{m.var}: {multi_to_str(t)} resources but no aliases", path, _r(wt, "weak")
                )
            env2 = {x: e for x, e in env.items() if x != m.var}
            child = _check(m.body, env2, ty, wt, path + ("weak",))
            return LamDerivation(_r(wt, "weak"), ty, (child,))
        if t.count != len(m.aliases):
            raise LamTypeError(
                f"{m.var}: multiplicity {t.count} differs from {len(m.aliases)} aliases",
                path,
                _r(wt, "shar"),
            )
        env2 = {x: e for x, e in env.items() if x != m.var}
        for a in m.aliases:
            if a in env2:
                raise LamTypeError(f"alias {a} shadows an assignment", path, _r(wt, "shar"))
            env2[a] = t.base
        child = _check(m.body, env2, ty, wt, path + ("share",))
        return LamDerivation(_r(wt, "shar"), ty, (child,))

    if isinstance(m, InterSub):
        if not (isinstance(m.body, Sharing) and m.body.var == m.var):
            raise LamTypeError(
                "intermediate substitution body must share its variable", path, _r(wt, "esub")
            )
        j = len(m.body.aliases)
        k = m.bag.size()
        if wt and j != k:
            raise LamTypeError(
                f"substitution binds {j} aliases, bag holds {k}", path, "TS:esub"
            )
        body_fv = fv(m.body) - {m.var}
        env_m, env_c = _split(env, [body_fv, bag_fv(m.bag)], wt, path, "esub")
        sigma = m.ann.base if (m.ann is not None and m.ann.base is not None) else None
        if sigma is None:
            sigma = _syn_bag_base(m.bag, env_c, wt, path)
        env_m2 = dict(env_m)
        env_m2[m.var] = multi(sigma, j)
        dbody = _check(m.body, env_m2, ty, wt, path + ("body",))
        dbag = _check_bag(m.bag, env_c, multi(sigma, k), wt, path + ("bag",))
        return LamDerivation(_r(wt, "esub"), ty, (dbody, dbag))

    if isinstance(m, ExplSub):
        k = m.bag.size()
        body_fv = fv(m.body) - set(m.aliases)
        env_m, env_c = _split(env, [body_fv, bag_fv(m.bag)], wt, path, "esub-l")
        sigma = m.ann if m.ann is not None else _syn_bag_base(m.bag, env_c, wt, path)
        env_m2 = dict(env_m)
        for a in m.aliases:
            if a in env_m2:
                raise LamTypeError(f"variable {a} shadows an assignment", path, _r(wt, "esub-l"))
            env_m2[a] = sigma
        dbody = _check(m.body, env_m2, ty, wt, path + ("body",))
        dbag = _check_bag(m.bag, env_c, multi(sigma, k), wt, path + ("bag",))
        return LamDerivation(_r(wt, "esub-l"), ty, (dbody, dbag))

    raise TypeError(f"not a term: {m!r}")


def _syn_bag_base(c: Bag, env: LamContext, wt: bool, path) -> StrictType:
    for n in c.items:
        t = _syn(n, {x: e for x, e in env.items() if x in fv(n)}, wt, path)
        if t is not None:
            return t
    return UnitT()


def _check_bag(c: Bag, env: LamContext, pi: MultisetType, wt: bool, path) -> LamDerivation:
    if c.size() != pi.count:
        raise LamTypeError(
            f"bag of {c.size()} resources cannot have type {multi_to_str(pi)}",
            path,
            _r(wt, "bag"),
        )
    if not c.items:
        if env:
            names = ", ".join(sorted(env))
            raise LamTypeError(f"empty bag consumes nothing, context has {names}", path, _r(wt, "unit-bag"))
        return LamDerivation(_r(wt, "unit-bag"), pi)
    envs = _split(env, [fv(n) for n in c.items], wt, path, "bag")
    kids = tuple(
        _check(n, envs[i], pi.base, wt, path + (f"bag[{i}]",)) for i, n in enumerate(c.items)
    )
    return LamDerivation(_r(wt, "bag"), pi, kids)
