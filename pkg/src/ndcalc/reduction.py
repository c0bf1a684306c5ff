"""Lazy reduction semantics for the nondeterministic session pi calculus.

A synchronization fires at a restriction when both components decompose into
compatible groups of prefixed branches on the restricted name; incompatible
alternatives are discarded, compatible ones survive the step.  Unguarded
choices inside a component are distributed over their contexts before
matching.  Exploration builds a rooted graph of canonical states.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import process as pr
from .process import (
    Alt,
    Avail,
    BranchGroup,
    Case,
    Close,
    DContext,
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
    alt,
    all_names,
    branch_groups,
    canonicalize,
    flatten_choice,
    free_names,
    par,
    struct_key,
    substitute,
    substitute_payload,
)
from .sestypes import MayConsume, MayProvide, Offer, Parr, Select, SessionType, Tensor, dual

# Mutation switches for the metatheory negative controls: disabling branch
# discarding or choice hoisting must break at least one suite.
ENABLE_BRANCH_DISCARD = True
ENABLE_CHOICE_HOISTING = True


@dataclass(frozen=True)
class StepLabel:
    rule: str  # Id, TensorPar, SelBra, OneBot, Some, None, Data
    subjects: frozenset[Name]
    discarded: int = 0

    def __str__(self) -> str:
        subj = ",".join(sorted(str(n) for n in self.subjects))
        extra = f" -{self.discarded}" if self.discarded else ""
        return f"[{self.rule} {subj}{extra}]"


def _fresh_comm_name(node: Process, x: Name) -> Name:
    digest = hashlib.sha256(
        (struct_key(node) + "|" + str(x) + "|TensorPar").encode()
    ).digest()
    tag = int.from_bytes(digest[:4], "big") % 90000 + 10000
    used = all_names(node)
    w = Name("w", tag)
    while w in used:
        tag += 1
        w = Name("w", tag)
    return w


def _branch_groups(side: Process, x: Name) -> list[BranchGroup]:
    if ENABLE_CHOICE_HOISTING:
        groups = branch_groups(side, x)
    else:
        groups = _groups_without_hoisting(side, x)
    if not ENABLE_BRANCH_DISCARD:
        groups = [g for g in groups if g.discarded == 0]
    return groups


def _groups_without_hoisting(side: Process, x: Name) -> list[BranchGroup]:
    branches = flatten_choice(side)
    located_per_branch = [pr._locate_all(b) for b in branches]
    classes: dict[tuple, list] = {}
    for locs in located_per_branch:
        per_branch: dict[tuple, object] = {}
        for loc in locs:
            cls = pr.prefix_class(loc.pfx, x)
            if cls is not None and cls not in per_branch:
                per_branch[cls] = loc
        for cls, loc in per_branch.items():
            classes.setdefault(cls, []).append(loc)
    out = []
    for cls, members in sorted(classes.items(), key=lambda kv: repr(kv[0])):
        ok = True
        discarded = 0
        for locs in located_per_branch:
            if any(pr.prefix_class(loc.pfx, x) == cls for loc in locs):
                continue
            if pr._discardable(locs, x, cls):
                discarded += 1
            else:
                ok = False
                break
        if ok:
            out.append(BranchGroup(cls, tuple(members), discarded))
    return out


_AXIOM_PAIRS = {
    ("send", "recv"): "TensorPar",
    ("pick", "case"): "SelBra",
    ("close", "wait"): "OneBot",
    ("avail", "expect"): "Some",
    ("unavail", "expect"): "None",
    ("dsend", "drecv"): "Data",
}


def _axiom_syncs(
    x: Name, ann: Optional[SessionType], left: Process, right: Process, node: Process
) -> Iterator[tuple[StepLabel, Process]]:
    groups_l = _branch_groups(left, x)
    groups_r = _branch_groups(right, x)

    # forwarder synchronizations, from either component
    for groups, other, other_is_left in (
        (groups_l, right, False),
        (groups_r, left, True),
    ):
        for g in groups:
            if g.cls[0] != "fwd":
                continue
            partner = g.cls[1]
            body = substitute(other, x, partner)
            branches = [m.ctx.plug(body) for m in g.members]
            label = StepLabel("Id", frozenset((x, partner)), g.discarded)
            yield label, alt(*branches)

    for gl in groups_l:
        for gr in groups_r:
            rule = _AXIOM_PAIRS.get((gl.cls[0], gr.cls[0]))
            flipped = False
            if rule is None:
                rule = _AXIOM_PAIRS.get((gr.cls[0], gl.cls[0]))
                flipped = True
            if rule is None:
                continue
            sender, receiver = (gr, gl) if flipped else (gl, gr)
            sender_on_left = not flipped
            discarded = gl.discarded + gr.discarded
            if rule == "TensorPar":
                yield from _fire_tensor_par(
                    x, ann, sender, receiver, sender_on_left, discarded, node
                )
            elif rule == "SelBra":
                yield from _fire_sel_bra(x, ann, sender, receiver, sender_on_left, discarded)
            elif rule == "OneBot":
                closes = alt(*[m.ctx.plug(Inact()) for m in sender.members])
                waits = alt(*[m.ctx.plug(m.node.cont) for m in receiver.members])
                yield StepLabel("OneBot", frozenset((x,)), discarded), par(closes, waits)
            elif rule == "Some":
                avails = alt(*[m.ctx.plug(m.node.cont) for m in sender.members])
                expects = alt(*[m.ctx.plug(m.node.cont) for m in receiver.members])
                inner = ann.inner if isinstance(ann, (MayProvide, MayConsume)) else None
                lhs, rhs = (avails, expects) if sender_on_left else (expects, avails)
                yield StepLabel("Some", frozenset((x,)), discarded), Res(x, inner, lhs, rhs)
            elif rule == "None":
                nones = alt(*[m.ctx.plug(Inact()) for m in sender.members])
                cancelled = alt(
                    *[
                        m.ctx.plug(
                            par(*[Unavail(w) for w in sorted(m.node.deps, key=Name.sort_key)])
                        )
                        for m in receiver.members
                    ]
                )
                yield StepLabel("None", frozenset((x,)), discarded), par(nones, cancelled)
            elif rule == "Data":
                yield from _fire_data(x, ann, sender, receiver, sender_on_left, discarded)


def _fire_tensor_par(x, ann, sender, receiver, sender_on_left, discarded, node):
    w = _fresh_comm_name(node, x)
    sender_type = ann if sender_on_left else (dual(ann) if ann is not None else None)
    if isinstance(sender_type, Tensor):
        ann_obj, ann_cont = sender_type.left, sender_type.right
    else:
        ann_obj = ann_cont = None
    recv_choice = alt(
        *[m.ctx.plug(substitute(m.node.cont, m.node.obj, w)) for m in receiver.members]
    )
    branches = []
    for m in sender.members:
        obj_part = substitute(m.node.obj_side, m.node.obj, w)
        inner = Res(x, ann_cont, m.node.cont_side, Res(w, ann_obj, obj_part, recv_choice))
        branches.append(m.ctx.plug(inner))
    yield StepLabel("TensorPar", frozenset((x,)), discarded), alt(*branches)


def _fire_sel_bra(x, ann, sender, receiver, sender_on_left, discarded):
    label = sender.cls[1]
    if not all(label in m.node.labels() for m in receiver.members):
        return
    picks = alt(*[m.ctx.plug(m.node.cont) for m in sender.members])
    cases = alt(*[m.ctx.plug(m.node.branch(label)) for m in receiver.members])
    ann2 = None
    if isinstance(ann, (Select, Offer)) and label in ann.labels():
        ann2 = ann.branch(label)
    lhs, rhs = (picks, cases) if sender_on_left else (cases, picks)
    yield StepLabel("SelBra", frozenset((x,)), discarded), Res(x, ann2, lhs, rhs)


def _fire_data(x, ann, sender, receiver, sender_on_left, discarded):
    by_payload: dict[str, list] = {}
    for m in sender.members:
        by_payload.setdefault(_payload_key(m.node.payload), []).append(m)
    ann2 = ann.right if isinstance(ann, (Tensor, Parr)) else None
    for key in sorted(by_payload):
        members = by_payload[key]
        payload = members[0].node.payload
        sends = alt(*[m.ctx.plug(m.node.cont) for m in members])
        recvs = alt(
            *[
                m.ctx.plug(substitute_payload(m.node.cont, m.node.var, payload))
                for m in receiver.members
            ]
        )
        dropped = len(sender.members) - len(members)
        lhs, rhs = (sends, recvs) if sender_on_left else (recvs, sends)
        yield StepLabel("Data", frozenset((x,)), discarded + dropped), Res(x, ann2, lhs, rhs)


def _payload_key(p) -> str:
    return f"lit:{p.text}" if isinstance(p, Lit) else f"ref:{p}"


def _step_candidates(p: Process) -> Iterator[tuple[StepLabel, Process]]:
    if isinstance(p, Par):
        for i, c in enumerate(p.parts):
            for label, c2 in _step_candidates(c):
                yield label, Par(p.parts[:i] + (c2,) + p.parts[i + 1:])
    elif isinstance(p, Alt):
        for i, b in enumerate(p.parts):
            for label, b2 in _step_candidates(b):
                yield label, Alt(p.parts[:i] + (b2,) + p.parts[i + 1:])
    elif isinstance(p, Res):
        for label, l2 in _step_candidates(p.left):
            yield label, Res(p.name, p.ann, l2, p.right)
        for label, r2 in _step_candidates(p.right):
            yield label, Res(p.name, p.ann, p.left, r2)
        yield from _axiom_syncs(p.name, p.ann, p.left, p.right, p)


def reducts(p: Process) -> frozenset[tuple[StepLabel, Process]]:
    """All one-step reducts of p modulo structural congruence, each with the
    rule label that derives it."""
    src = canonicalize(p)
    seen: dict[tuple[StepLabel, str], tuple[StepLabel, Process]] = {}
    for label, q in _step_candidates(src):
        qc = canonicalize(q)
        key = (label, struct_key(qc))
        if key not in seen:
            seen[key] = (label, qc)
    return frozenset(seen.values())


def reducts_list(p: Process) -> list[tuple[StepLabel, Process]]:
    """Deterministically ordered reducts, the contract for the stepper."""
    return sorted(
        reducts(p), key=lambda lq: (lq[0].rule, sorted(map(str, lq[0].subjects)), struct_key(lq[1]))
    )


def is_terminal(p: Process) -> bool:
    return not reducts(p)


@dataclass
class ReductionGraph:
    root: int
    states: dict[int, Process] = field(default_factory=dict)
    depth: dict[int, int] = field(default_factory=dict)
    edges: list[tuple[int, StepLabel, int]] = field(default_factory=list)
    frontier: set[int] = field(default_factory=set)
    truncated: bool = False
    expanded: set[int] = field(default_factory=set)
    _key2id: dict[str, int] = field(default_factory=dict)

    def find(self, p: Process) -> Optional[int]:
        """State id of the canonical form of p, if present."""
        return self._key2id.get(struct_key(canonicalize(p)))

    def terminal_ids(self) -> list[int]:
        has_out = {src for src, _, _ in self.edges}
        return [i for i in self.expanded if i not in has_out]

    def successors(self, i: int) -> list[tuple[StepLabel, int]]:
        return [(lbl, dst) for src, lbl, dst in self.edges if src == i]


def explore(p: Process, max_depth: int, max_states: int) -> ReductionGraph:
    """Breadth-first expansion of the reduction graph from p, deduplicating
    states by canonical form, stopping at either bound."""
    if max_depth <= 0 or max_states <= 0:
        raise ValueError("bounds must be positive")
    root = canonicalize(p)
    g = ReductionGraph(root=0)
    g.states[0] = root
    g.depth[0] = 0
    g._key2id[struct_key(root)] = 0
    queue: deque[int] = deque([0])
    while queue:
        i = queue.popleft()
        if g.depth[i] >= max_depth:
            g.frontier.add(i)
            g.truncated = True
            continue
        g.expanded.add(i)
        for label, q in reducts_list(g.states[i]):
            k = struct_key(q)
            j = g._key2id.get(k)
            if j is None:
                if len(g.states) >= max_states:
                    g.truncated = True
                    continue
                j = len(g.states)
                g._key2id[k] = j
                g.states[j] = q
                g.depth[j] = g.depth[i] + 1
                queue.append(j)
            g.edges.append((i, label, j))
    return g
