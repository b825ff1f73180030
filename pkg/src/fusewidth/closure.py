"""Constructive closure machinery: special constants, the term surgeries
(label / join / append), the automaton recognizing the fusion closure, and
the grid-shaped witness family for unbounded instances.

The closure automaton simulates fusion steps with gadgets over states
``(mode, visible special constants, tracked state)``:

* a 1- or 2-pair fusion of two completed structures renames the special
  constants marking the fused elements to a shared fresh constant, glues,
  and forgets it when the merged color is blue (join gadget);
* a fusion of a completed structure's red element onto a blue leaf element
  labels the leaf with the partner's constant, glues, forgets, and resumes
  the host run (append gadget);
* the second pair of a red-red fusion rides a "carried" constant from a
  leaf up to the glueing node that merges it with the genuine mark.

Every special constant visible in a state is flagged as a mark (it names a
red or green element by its true final color), a carry, or a pending
append; gadget applicability is decided from the flags and the constant
names alone.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .abstraction import RGBScheme, check_conformance
from .algebra import (
    AtomSym,
    ComposeSym,
    ForgetSym,
    RenameSym,
    Term,
    compose_terms,
    eval_term,
    eval_term_traced,
    forget_term,
    rename_term,
    sort_of,
)
from .automata import (
    AnnotatedAutomaton,
    AnnState,
    Rule,
    TreeAutomaton,
    verify_all_connected,
)
from .core import (
    Color,
    Signature,
    Structure,
    _compose_map,
    _UnionFind,
    canonical_form,
    canonical_with_perm,
    color_key,
    color_name,
    color_of,
    color_profile,
    quotient,
)
from .errors import DomainError, PreconditionError, UndefinedOperation

_SPECIAL = re.compile(r"^c\^(\d+)_\{([^{}]*)\}$")


class SpecialConstants:
    """The fresh constants ``c^i_color`` marking red and green elements in
    witness terms; ``K`` (their number) bounds the tree-width increase of
    the closure."""

    __slots__ = ("alphabet", "budgets")

    def __init__(self, alphabet: Iterable[str], budgets: Mapping[Color, int]):
        from .core import all_colors

        alpha = frozenset(alphabet)
        gamma = all_colors(alpha)
        b = {frozenset(c): int(n) for c, n in budgets.items()}
        if set(b) != set(gamma):
            raise DomainError("budgets must cover every color")
        for c, n in b.items():
            if n < 2:
                raise DomainError(f"index budget for {color_name(c)} must be >= 2")
        object.__setattr__(self, "alphabet", alpha)
        object.__setattr__(self, "budgets", b)

    def __setattr__(self, *a):
        raise AttributeError("SpecialConstants is immutable")

    @classmethod
    def make(
        cls,
        alphabet: Iterable[str],
        scheme: RGBScheme | None = None,
        red_index_budget: int | str = 2,
        max_arity: int = 1,
    ) -> "SpecialConstants":
        """Default budget 2 per color; ``red_index_budget='2xArity'``
        raises red budgets to ``2 * max_arity``."""
        from .core import all_colors

        alpha = frozenset(alphabet)
        budgets = {c: 2 for c in all_colors(alpha)}
        if red_index_budget == "2xArity":
            if scheme is None:
                raise DomainError("'2xArity' budget needs a scheme")
            for c in scheme.red:
                budgets[c] = max(2, 2 * max_arity)
        elif int(red_index_budget) != 2:
            if scheme is None:
                raise DomainError("custom red budget needs a scheme")
            for c in scheme.red:
                budgets[c] = max(2, int(red_index_budget))
        return cls(alpha, budgets)

    def name(self, color: Color, index: int) -> str:
        c = frozenset(color)
        if index not in self.indices(c):
            raise DomainError(f"index {index} outside budget for {color_name(c)}")
        return f"c^{index}_{color_name(c)}"

    def indices(self, color: Color) -> range:
        c = frozenset(color)
        if c not in self.budgets:
            raise DomainError(f"color {color_name(c)} outside the alphabet")
        return range(1, self.budgets[c] + 1)

    def is_special(self, name: str) -> bool:
        return bool(_SPECIAL.match(name))

    def color_of_name(self, name: str) -> Color:
        m = _SPECIAL.match(name)
        if not m:
            raise DomainError(f"{name!r} is not a special constant")
        return frozenset(x for x in m.group(2).split(",") if x)

    def index_of_name(self, name: str) -> int:
        m = _SPECIAL.match(name)
        if not m:
            raise DomainError(f"{name!r} is not a special constant")
        return int(m.group(1))

    def all_names(self) -> tuple[str, ...]:
        out = []
        for c in sorted(self.budgets, key=lambda c: (len(c), color_key(c))):
            for i in self.indices(c):
                out.append(self.name(c, i))
        return tuple(out)

    @property
    def K(self) -> int:
        return sum(self.budgets.values())

    def to_json(self) -> dict:
        return {
            "constants": [
                {"name": self.name(c, i), "color": sorted(c), "index": i}
                for c in sorted(self.budgets, key=lambda c: (len(c), color_key(c)))
                for i in self.indices(c)
            ],
            "count": self.K,
        }


# -- term surgeries -----------------------------------------------------------


def _resort(node, children: tuple[Term, ...]) -> Term:
    """Rebuild a node over modified children, re-inferring symbol sorts."""
    if isinstance(node, AtomSym):
        return Term(node)
    if isinstance(node, ComposeSym):
        return compose_terms(children[0], children[1])
    if isinstance(node, RenameSym):
        moves = {a: b for a, b in node.mapping if a != b}
        return rename_term(moves, children[0])
    if isinstance(node, ForgetSym):
        return forget_term(node.drop, children[0])
    raise DomainError(f"unknown symbol {node!r}")


def replace_subterm(t: Term, path: tuple[int, ...], new: Term) -> Term:
    if not path:
        return new
    children = list(t.children)
    children[path[0]] = replace_subterm(children[path[0]], path[1:], new)
    return _resort(t.node, tuple(children))


def label_op(t: Term, leaf: tuple[int, ...], k: int, constant: str) -> Term:
    """Add ``constant`` to the ``k``-th constant set of the leaf atom (and
    to every set equal to it); ancestors keep their shape with adjusted
    sorts."""
    node = t.at(leaf).node
    if not isinstance(node, AtomSym):
        raise DomainError(f"position {leaf} is not an atom leaf")
    if not 1 <= k <= len(node.arg_sets):
        raise DomainError(f"position index {k} out of range for {node.rel!r}")
    target = node.arg_sets[k - 1]
    new_sets = tuple(s | {constant} if s == target else s for s in node.arg_sets)
    return replace_subterm(t, leaf, Term(AtomSym(node.rel, new_sets)))


def _pick_join_target(
    specials: SpecialConstants,
    delta: Color,
    visible: frozenset,
    index: int | None,
) -> str:
    names = [specials.name(delta, i) for i in specials.indices(delta)]
    if index is not None:
        name = specials.name(delta, index)
        if name in visible:
            raise UndefinedOperation(
                f"join target {name} already visible", blocking=name
            )
        return name
    for name in names:
        if name not in visible:
            return name
    raise UndefinedOperation(
        f"every join constant for {color_name(delta)} is visible", blocking=names[-1]
    )


def join_op(
    t1: Term,
    t2: Term,
    c1: str,
    c2: str,
    scheme: RGBScheme,
    specials: SpecialConstants,
    index: int | None = None,
) -> Term:
    """Fuse the elements designated by the special constants ``c1`` of
    ``t1`` and ``c2`` of ``t2``: rename both to a fresh shared constant,
    glue, and forget it when the merged color is blue."""
    s1, s2 = sort_of(t1), sort_of(t2)
    if c1 not in s1:
        raise UndefinedOperation(f"{c1} is not visible in the left term", blocking=c1)
    if c2 not in s2:
        raise UndefinedOperation(f"{c2} is not visible in the right term", blocking=c2)
    if s1 & s2:
        clash = sorted(s1 & s2)[0]
        raise UndefinedOperation(f"terms share visible constant {clash}", blocking=clash)
    g1 = specials.color_of_name(c1)
    g2 = specials.color_of_name(c2)
    if g1 & g2:
        raise UndefinedOperation(
            f"colors {color_name(g1)} and {color_name(g2)} intersect"
        )
    delta = g1 | g2
    target = _pick_join_target(specials, delta, s1 | s2, index)
    joined = compose_terms(rename_term({c1: target}, t1), rename_term({c2: target}, t2))
    drop = frozenset({target}) if delta in scheme.blue else frozenset()
    return forget_term(drop, joined)


def join2_op(
    t1: Term,
    t2: Term,
    pair1: tuple[str, str],
    pair2: tuple[str, str],
    scheme: RGBScheme,
    specials: SpecialConstants,
) -> Term:
    """Two-pair overload: fuse ``pair1[j]`` with ``pair2[j]`` for both
    ``j`` simultaneously."""
    s1, s2 = sort_of(t1), sort_of(t2)
    (c11, c12), (c21, c22) = pair1, pair2
    for c, s, side in ((c11, s1, "left"), (c12, s1, "left"), (c21, s2, "right"), (c22, s2, "right")):
        if c not in s:
            raise UndefinedOperation(f"{c} is not visible in the {side} term", blocking=c)
    if len({c11, c12}) != 2 or len({c21, c22}) != 2:
        raise UndefinedOperation("the two fused constants per side must differ")
    if s1 & s2:
        clash = sorted(s1 & s2)[0]
        raise UndefinedOperation(f"terms share visible constant {clash}", blocking=clash)
    deltas = []
    for ca, cb in ((c11, c21), (c12, c22)):
        ga, gb = specials.color_of_name(ca), specials.color_of_name(cb)
        if ga & gb:
            raise UndefinedOperation(
                f"colors {color_name(ga)} and {color_name(gb)} intersect"
            )
        deltas.append(ga | gb)
    visible = s1 | s2
    target1 = _pick_join_target(specials, deltas[0], visible, None)
    target2 = _pick_join_target(specials, deltas[1], visible | {target1}, None)
    joined = compose_terms(
        rename_term({c11: target1, c12: target2}, t1),
        rename_term({c21: target1, c22: target2}, t2),
    )
    drop = frozenset(
        t for t, d in ((target1, deltas[0]), (target2, deltas[1])) if d in scheme.blue
    )
    return forget_term(drop, joined)


def append_op(t1: Term, t2: Term, leaf: tuple[int, ...], k: int, constant: str) -> Term:
    """Substitute the leaf by ``forget_c(label(leaf, k, c) + t2)``: the
    leaf's k-th element is fused with the element of ``t2`` designated by
    ``c``."""
    node = t1.at(leaf).node
    if not isinstance(node, AtomSym):
        raise DomainError(f"position {leaf} is not an atom leaf")
    if constant not in sort_of(t2):
        raise UndefinedOperation(
            f"{constant} is not visible in the appended term", blocking=constant
        )
    labeled = label_op(Term(node), (), k, constant)
    shared = sort_of(labeled) & sort_of(t2)
    if shared != {constant}:
        extra = sorted(shared - {constant})[0]
        raise UndefinedOperation(
            f"leaf and appended term share constant {extra}", blocking=extra
        )
    sub = forget_term({constant}, compose_terms(labeled, t2))
    return replace_subterm(t1, leaf, sub)


# -- the closure automaton ----------------------------------------------------

ACCEPT = "ACCEPT"


@dataclass(frozen=True)
class CState:
    """Closure-automaton state: gadget mode, flagged visible special
    constants, and the tracked annotated state (``None`` once the run has
    finished reading a grammar term)."""

    mode: tuple
    marks: frozenset
    carries: frozenset
    pends: frozenset
    base: AnnState | None

    def consts(self) -> frozenset:
        return self.marks | self.carries | self.pends


def _base(marks, carries, base) -> CState:
    return CState(("base",), frozenset(marks), frozenset(carries), frozenset(), base)


@dataclass
class ClosureAutomaton:
    """Automaton over the extended constant alphabet whose evaluated
    language is the fusion closure of the source automaton's language."""

    automaton: TreeAutomaton
    specials: SpecialConstants
    scheme: RGBScheme
    source: TreeAutomaton

    def to_json(self) -> dict:
        from .automata import automaton_to_json

        out = automaton_to_json(self.automaton)
        out["specialConstants"] = self.specials.to_json()
        out["scheme"] = self.scheme.to_json()
        return out


def _pairwise_disjoint(colors: list[Color]) -> bool:
    for i in range(len(colors)):
        for j in range(i + 1, len(colors)):
            if colors[i] & colors[j]:
                return False
    return True


def build_closure_automaton(
    annotated: AnnotatedAutomaton,
    scheme: RGBScheme | None = None,
    specials: SpecialConstants | None = None,
    red_index_budget: int | str = 2,
) -> ClosureAutomaton:
    """Build the automaton recognizing the fusion closure of the source
    language.  Requires a conforming, connected, sort-empty language."""
    scheme = scheme or annotated.scheme
    source = annotated.base
    sig = source.sig
    for q in source.finals:
        sort = source.state_sort(q)
        if sort:
            raise PreconditionError(
                f"final state {q!r} accepts sort {sorted(sort)}, expected {{}}"
            )
    conf = check_conformance(source, scheme)
    if not conf.ok:
        raise PreconditionError(
            "language does not conform to the scheme: " + "; ".join(conf.diagnostics)
        )
    connected, cex = verify_all_connected(source)
    if not connected:
        raise PreconditionError("language contains a disconnected structure", cex)
    max_arity = max(sig.relations.values(), default=1)
    specials = specials or SpecialConstants.make(
        sig.colors, scheme, red_index_budget, max_arity
    )
    clash = set(specials.all_names()) & set(sig.constants)
    if clash:
        raise DomainError(f"special constants clash with base constants: {sorted(clash)}")
    sig2 = Signature(sig.relations, sig.colors, tuple(sig.constants) + specials.all_names())

    ann = annotated.automaton
    ann_finals = ann.finals
    atoms, unary, binary = ann.rules_by_op_kind()
    unary_by_lhs: dict = {}
    for r in unary:
        unary_by_lhs.setdefault(r.lhs[0], []).append(r)
    binary_by_lhs: dict = {}
    for r in binary:
        binary_by_lhs.setdefault(r.lhs[0], []).append((0, r))
        binary_by_lhs.setdefault(r.lhs[1], []).append((1, r))

    gamma = sig.gamma()
    nonblue = [g for g in gamma if g not in scheme.blue]
    reds = sorted(scheme.red, key=lambda c: (len(c), color_key(c)))

    states: set = set()
    rules: set[Rule] = set()
    queue: list[CState] = []
    by_annbase: dict = {}
    completed: list[CState] = []
    jren_index: dict = {}
    app_states: list[CState] = []

    def state_sort(s: CState) -> frozenset:
        base_sort = frozenset() if s.base is None else ann.state_sort(s.base)
        return (base_sort or frozenset()) | s.consts()

    def emit(lhs: tuple, op, target: CState):
        rules.add(Rule(lhs, op, target))
        if target not in states:
            states.add(target)
            queue.append(target)

    def _class_of(classes, arg_set):
        for c in classes:
            if c.consts == arg_set:
                return c.consts
        raise DomainError("atom argument set missing from annotated classes")

    # seed: marked atoms, optionally decorated with pending appends and
    # carried constants on blue classes
    def decorations(cls_color: Color, taken: frozenset):
        """Subsets of red-named constants attachable to a blue class:
        distinct colors, pairwise disjoint, disjoint from the class color."""
        candidates = []
        for g in reds:
            if g & cls_color:
                continue
            for i in specials.indices(g):
                name = specials.name(g, i)
                if name not in taken:
                    candidates.append((g, name))
        for size in range(len(candidates) + 1):
            for combo in itertools.combinations(candidates, size):
                cols = [g for g, _ in combo]
                if len({frozenset(g) for g in cols}) != len(cols):
                    continue
                if not _pairwise_disjoint(cols):
                    continue
                yield tuple(name for _, name in combo)

    for r in atoms:
        op: AtomSym = r.op
        target: AnnState = r.rhs
        classes = list(target.classes)
        marked = [c for c in classes if c.guess not in scheme.blue]
        blue_classes = [c for c in classes if c.guess in scheme.blue]
        index_choices = itertools.product(
            *(specials.indices(c.guess) for c in marked)
        )
        for idxs in index_choices:
            mark_names = {}
            ok = True
            for cls, i in zip(marked, idxs):
                name = specials.name(cls.guess, i)
                if name in mark_names.values():
                    ok = False
                    break
                mark_names[cls.consts] = name
            if not ok:
                continue
            taken = frozenset(mark_names.values())
            per_class_options = []
            for cls in blue_classes:
                opts = []
                for deco in decorations(cls.guess, taken):
                    for labels in itertools.product(("pend", "carry"), repeat=len(deco)):
                        opts.append(tuple(zip(deco, labels)))
                per_class_options.append(opts)
            for assignment in itertools.product(*per_class_options):
                flat = [item for group in assignment for item in group]
                names = [n for n, _ in flat]
                if len(set(names)) != len(names) or set(names) & taken:
                    continue
                pends = frozenset(n for n, lab in flat if lab == "pend")
                carries = frozenset(n for n, lab in flat if lab == "carry")
                additions: dict[frozenset, set] = {}
                for cls, name in mark_names.items():
                    additions.setdefault(cls, set()).add(name)
                for cls, group in zip(blue_classes, assignment):
                    for name, _ in group:
                        additions.setdefault(cls.consts, set()).add(name)
                new_sets = tuple(
                    s | frozenset(additions.get(_class_of(classes, s), ()))
                    for s in op.arg_sets
                )
                mode = ("app",) if pends else ("base",)
                st = CState(mode, frozenset(mark_names.values()), carries, pends, target)
                emit((), AtomSym(op.rel, new_sets), st)

    def enrich_unary(op, extra: frozenset):
        if isinstance(op, ForgetSym):
            return ForgetSym(op.drop, op.domain | extra)
        alpha = op.map()
        alpha.update({c: c for c in extra})
        return RenameSym(tuple(sorted(alpha.items())))

    def try_base_compose(s1: CState, s2: CState, rhs: AnnState):
        shared = s1.consts() & s2.consts()
        lhs_sorts = (state_sort(s1), state_sort(s2))
        if not shared:
            target = _base(s1.marks | s2.marks, s1.carries | s2.carries, rhs)
            emit((s1, s2), ComposeSym(*lhs_sorts), target)
            return
        if len(shared) == 1:
            c = next(iter(shared))
            mark_carry = (c in s1.marks and c in s2.carries) or (
                c in s1.carries and c in s2.marks
            )
            if mark_carry:
                marks = (s1.marks | s2.marks) | {c}
                carries = (s1.carries | s2.carries) - {c}
                mid = CState(("m3c", c), marks, carries, frozenset(), rhs)
                emit((s1, s2), ComposeSym(*lhs_sorts), mid)
                after = _base(marks - {c}, carries, rhs)
                emit((mid,), ForgetSym(frozenset({c}), state_sort(mid)), after)

    def try_join_renames(s: CState):
        sort = state_sort(s)
        for c in sorted(s.marks):
            g1 = specials.color_of_name(c)
            for g2 in nonblue:
                if g1 & g2:
                    continue
                delta = g1 | g2
                for j in specials.indices(delta):
                    target_name = specials.name(delta, j)
                    if target_name in sort - {c}:
                        continue
                    jinfo = ((target_name, color_key(g1)),)
                    succ = CState(
                        ("jren", jinfo),
                        (s.marks - {c}) | {target_name},
                        s.carries,
                        frozenset(),
                        s.base,
                    )
                    emit((s,), enrich_unary(RenameSym(((c, target_name),)), sort - {c}), succ)
        for ca, cb in itertools.permutations(sorted(s.marks), 2):
            ga, gb = specials.color_of_name(ca), specials.color_of_name(cb)
            for g2a in nonblue:
                if ga & g2a:
                    continue
                for g2b in nonblue:
                    if gb & g2b:
                        continue
                    da, db = ga | g2a, gb | g2b
                    for ja in specials.indices(da):
                        ta = specials.name(da, ja)
                        if ta in sort - {ca, cb}:
                            continue
                        for jb in specials.indices(db):
                            tb = specials.name(db, jb)
                            if tb == ta or tb in sort - {ca, cb}:
                                continue
                            jinfo = tuple(
                                sorted(((ta, color_key(ga)), (tb, color_key(gb))))
                            )
                            succ = CState(
                                ("jren", jinfo),
                                (s.marks - {ca, cb}) | {ta, tb},
                                s.carries,
                                frozenset(),
                                s.base,
                            )
                            alpha = {ca: ta, cb: tb}
                            emit(
                                (s,),
                                enrich_unary(
                                    RenameSym(tuple(sorted(alpha.items()))),
                                    sort - {ca, cb},
                                ),
                                succ,
                            )

    def try_join_compose(s1: CState, s2: CState):
        info1 = dict(s1.mode[1])
        info2 = dict(s2.mode[1])
        if set(info1) != set(info2):
            return
        targets = frozenset(info1)
        if s1.consts() & s2.consts() != targets:
            return
        for t in targets:
            own1 = frozenset(info1[t])
            own2 = frozenset(info2[t])
            if own1 & own2 or own1 | own2 != specials.color_of_name(t):
                return
        forgets = frozenset(
            t for t in targets if specials.color_of_name(t) in scheme.blue
        )
        marks = (s1.marks | s2.marks)
        carries = (s1.carries | s2.carries) - marks
        mid = CState(("jcomp", tuple(sorted(forgets))), marks, carries, frozenset(), None)
        emit((s1, s2), ComposeSym(state_sort(s1), state_sort(s2)), mid)
        after = _base(marks - forgets, carries, None)
        emit((mid,), ForgetSym(forgets, state_sort(mid)), after)

    def try_append(app: CState, partner: CState):
        shared = app.consts() & partner.consts()
        for cp in sorted(app.pends):
            if cp not in partner.marks:
                continue
            rest = shared - {cp}
            if not rest:
                extra_forget: frozenset = frozenset()
            elif len(rest) == 1:
                cm = next(iter(rest))
                if cm in app.marks and cm in partner.carries:
                    extra_forget = frozenset({cm})
                else:
                    continue
            else:
                continue
            forgets = frozenset({cp}) | extra_forget
            marks = (app.marks | partner.marks) | forgets
            carries = (app.carries | partner.carries) - marks
            pends = app.pends - {cp}
            mid = CState(
                ("appc", tuple(sorted(forgets))), marks, carries, pends, app.base
            )
            emit((app, partner), ComposeSym(state_sort(app), state_sort(partner)), mid)
            mode = ("app",) if pends else ("base",)
            after = CState(mode, marks - forgets, carries, pends, app.base)
            emit((mid,), ForgetSym(forgets, state_sort(mid)), after)

    def is_completed(s: CState) -> bool:
        return s.mode == ("base",) and (s.base is None or s.base in ann_finals)

    processed: set = set()
    while queue:
        s = queue.pop()
        if s in processed:
            continue
        processed.add(s)
        if s.mode == ("base",):
            if s.base is not None:
                by_annbase.setdefault(s.base, []).append(s)
                for r in unary_by_lhs.get(s.base, ()):
                    succ = _base(s.marks, s.carries, r.rhs)
                    emit((s,), enrich_unary(r.op, s.consts()), succ)
                for side, r in binary_by_lhs.get(s.base, ()):
                    other = r.lhs[1 - side]
                    for s2 in list(by_annbase.get(other, ())):
                        if s2.mode != ("base",):
                            continue
                        pair = (s, s2) if side == 0 else (s2, s)
                        try_base_compose(pair[0], pair[1], r.rhs)
            if is_completed(s):
                emit(
                    (s,),
                    ForgetSym(s.consts(), state_sort(s)),
                    ACCEPT,
                )
                completed.append(s)
                try_join_renames(s)
                for app in list(app_states):
                    try_append(app, s)
        elif s.mode[0] == "jren":
            key = frozenset(t for t, _ in s.mode[1])
            jren_index.setdefault(key, []).append(s)
            for s2 in list(jren_index[key]):
                try_join_compose(s, s2)
                if s2 is not s:
                    try_join_compose(s2, s)
        elif s.mode[0] == "app":
            app_states.append(s)
            for partner in list(completed):
                try_append(s, partner)
        # jcomp / appc / m3c successors were emitted at creation

    all_states = set(states) | {ACCEPT}
    automaton = TreeAutomaton(sig2, all_states, {ACCEPT}, rules)
    return ClosureAutomaton(automaton, specials, scheme, source)


# -- grid witnesses -----------------------------------------------------------


@dataclass(frozen=True)
class GridParams:
    """Sources for the grid-shaped family: two connected structures, each
    with at least three elements of its witness color; the two colors are
    disjoint."""

    n: int
    color1: Color
    color2: Color
    s1: Structure
    s2: Structure

    def __post_init__(self):
        object.__setattr__(self, "color1", frozenset(self.color1))
        object.__setattr__(self, "color2", frozenset(self.color2))
        if self.n < 1:
            raise DomainError("grid dimension must be >= 1")
        if self.color1 & self.color2:
            raise DomainError("witness colors must be disjoint")
        for s, col, side in ((self.s1, self.color1, 1), (self.s2, self.color2, 2)):
            if s.sort:
                raise DomainError(f"source {side} must have sort {{}}")
            hits = [u for u in s.universe() if color_of(s, u) == col]
            if len(hits) < 3:
                raise DomainError(
                    f"source {side} needs >= 3 elements of color {color_name(col)}"
                )


@dataclass(frozen=True)
class GridWitness:
    structure: Structure
    groups: dict[tuple[int, int], frozenset] = field(compare=False)


def _seed_cell(p: GridParams) -> tuple[Structure, int, int, int, int]:
    """Fuse one color1/color2 pair; report the v/w anchors of both colors
    in the fused cell."""
    picks1 = [u for u in p.s1.universe() if color_of(p.s1, u) == p.color1]
    picks2 = [u for u in p.s2.universe() if color_of(p.s2, u) == p.color2]
    u1, v1, w1 = picks1[:3]
    u2, v2, w2 = picks2[:3]
    union, left, right = _compose_map(p.s1, p.s2)
    uf = _UnionFind(range(union.size))
    uf.union(left[u1], right[u2])
    cell, mapping = _quotient_pair(union, uf)
    return (
        cell,
        mapping[left[v1]],
        mapping[left[w1]],
        mapping[right[v2]],
        mapping[right[w2]],
    )


def _quotient_pair(s: Structure, uf: _UnionFind):
    from .core import _quotient_map

    return _quotient_map(s, uf.blocks())


def build_grid_witness(p: GridParams) -> Structure:
    """The grid-shaped fusion of n*n cells; its Gaifman graph has an
    n x n grid minor, so its tree-width is at least n."""
    return build_grid_witness_with_groups(p).structure


def build_grid_witness_with_groups(p: GridParams) -> GridWitness:
    cell, v1, w1, v2, w2 = _seed_cell(p)
    n = p.n
    size = cell.size
    index = {(i, j, e): (i * n + j) * size + e for i in range(n) for j in range(n) for e in range(size)}
    uf = _UnionFind(range(n * n * size))
    for i in range(n):
        for j in range(n):
            if j > 0:
                uf.union(index[(i, j, v1)], index[(i, j - 1, v2)])
            if i > 0:
                uf.union(index[(i, j, w2)], index[(i - 1, j, w1)])
    rel = {
        r: [
            tuple(index[(i, j, x)] for x in t)
            for i in range(n)
            for j in range(n)
            for t in cell.tuples(r)
        ]
        for r in cell.rel
    }
    big = Structure(cell.sig, n * n * size, rel, {})
    merged, mapping = _quotient_pair(big, uf)
    groups: dict[tuple[int, int], set] = {(i, j): set() for i in range(n) for j in range(n)}
    donated = {}
    for i in range(n):
        for j in range(n):
            if j > 0:
                donated[(i, j - 1, v2)] = (i, j)
            if i > 0:
                donated[(i - 1, j, w1)] = (i, j)
    for (i, j, e), raw in index.items():
        owner = donated.get((i, j, e), (i, j))
        groups[owner].add(mapping[raw])
    return GridWitness(merged, {k: frozenset(v) for k, v in groups.items()})


# -- witness terms for fusion derivations -------------------------------------


@dataclass(frozen=True)
class BaseDerivation:
    term: Term


@dataclass(frozen=True)
class FusionStep:
    left: "Derivation"
    right: "Derivation"
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))


Derivation = BaseDerivation | FusionStep


def derived_structure(d: Derivation, sig: Signature) -> Structure:
    from .core import fuse_with

    if isinstance(d, BaseDerivation):
        return eval_term(d.term, sig)
    return fuse_with(
        derived_structure(d.left, sig), derived_structure(d.right, sig), d.pairs
    )


class _WitnessBuilder:
    def __init__(self, sig: Signature, scheme: RGBScheme, specials: SpecialConstants):
        self.sig = sig
        self.scheme = scheme
        self.specials = specials
        self.sig2 = Signature(
            sig.relations, sig.colors, tuple(sig.constants) + specials.all_names()
        )

    def strip(self, term: Term) -> Term:
        drop = frozenset(c for c in sort_of(term) if self.specials.is_special(c))
        return forget_term(drop, term)

    def plain_value(self, term: Term) -> Structure:
        return eval_term(self.strip(term), self.sig2)

    def align(self, derived: Structure, term: Term) -> dict[int, int]:
        """Map elements of the derived structure to elements of the
        term's value through their canonical forms."""
        want = Structure(self.sig2, derived.size, derived.rel, derived.const)
        canon_d, perm_d = canonical_with_perm(want)
        plain = self.plain_value(term)
        canon_t, perm_t = canonical_with_perm(plain)
        if canon_d != canon_t:
            raise DomainError("witness term does not evaluate to the derived structure")
        inv_t = {v: k for k, v in perm_t.items()}
        return {u: inv_t[perm_d[u]] for u in want.universe()}

    def marks_of(self, term: Term) -> dict[int, str]:
        value = eval_term(term, self.sig2)
        out: dict[int, str] = {}
        for c, e in value.const.items():
            if self.specials.is_special(c):
                out[e] = c
        return out

    def leaf_of(self, term: Term, element: int) -> tuple[tuple[int, ...], int]:
        _, origins = eval_term_traced(term, self.sig2)
        spots = sorted(origins[element])
        if not spots:
            raise DomainError("element has no leaf origin")
        return spots[0]

    def remap_marks(self, term: Term, forbidden: frozenset) -> Term:
        """Rename this term's visible special constants away from the
        forbidden set, staying inside each color's index budget."""
        sort = sort_of(term)
        clashes = sorted(c for c in sort if self.specials.is_special(c) and c in forbidden)
        if not clashes:
            return term
        moves: dict[str, str] = {}
        occupied = set(sort) | set(forbidden)
        for c in clashes:
            g = self.specials.color_of_name(c)
            for i in self.specials.indices(g):
                candidate = self.specials.name(g, i)
                if candidate not in occupied:
                    moves[c] = candidate
                    occupied.add(candidate)
                    break
            else:
                raise UndefinedOperation(
                    f"no free index to remap {c}", blocking=c
                )
        return rename_term(moves, term)

    def build(self, d: Derivation) -> Term:
        if isinstance(d, BaseDerivation):
            return self._build_base(d)
        left = self.build(d.left)
        right = self.build(d.right)
        right = self.remap_marks(right, sort_of(left))
        s_left = derived_structure(d.left, self.sig)
        s_right = derived_structure(d.right, self.sig)
        if len(d.pairs) == 1:
            term = self._fuse_one(left, right, s_left, s_right, d.pairs[0])
        elif len(d.pairs) == 2:
            term = self._fuse_two(left, right, s_left, s_right, d.pairs)
        else:
            raise DomainError(
                "conforming closures never need matchings with 3 or more pairs"
            )
        self._validate(d, term)
        return term

    def _build_base(self, d: BaseDerivation) -> Term:
        value = eval_term(d.term, self.sig)
        if value.sort:
            raise DomainError("derivation base terms must have sort {}")
        _, origins = eval_term_traced(d.term, self.sig)
        term = d.term
        used: set[str] = set()
        for u in value.universe():
            g = color_of(value, u)
            if g in self.scheme.blue:
                continue
            name = None
            for i in self.specials.indices(g):
                candidate = self.specials.name(g, i)
                if candidate not in used:
                    name = candidate
                    break
            if name is None:
                raise DomainError(
                    f"more than {len(self.specials.indices(g))} non-blue elements "
                    f"of color {color_name(g)}: the set does not conform"
                )
            used.add(name)
            path, pos = sorted(origins[u])[0]
            term = label_op(term, path, pos, name)
        self._check_value(d.term, term)
        return term

    def _check_value(self, original: Term, marked: Term):
        want = canonical_form(
            _as_sig2(eval_term(original, self.sig), self.sig2)
        )
        got = canonical_form(self.plain_value(marked))
        if want != got:
            raise DomainError("marking changed the term's value")

    def _kinds(self, s1: Structure, s2: Structure, pair: tuple[int, int]):
        g1 = color_of(s1, pair[0])
        g2 = color_of(s2, pair[1])
        return self.scheme.kind(g1), self.scheme.kind(g2)

    def _fuse_one(self, t1, t2, s1, s2, pair):
        k1, k2 = self._kinds(s1, s2, pair)
        m1 = self.align(s1, t1)
        m2 = self.align(s2, t2)
        marks1 = self.marks_of(t1)
        marks2 = self.marks_of(t2)
        if k1 != "blue" and k2 != "blue":
            return join_op(
                t1, t2, marks1[m1[pair[0]]], marks2[m2[pair[1]]], self.scheme, self.specials
            )
        if k1 == "blue" and k2 == "red":
            path, pos = self.leaf_of(t1, m1[pair[0]])
            return append_op(t1, t2, path, pos, marks2[m2[pair[1]]])
        if k1 == "red" and k2 == "blue":
            path, pos = self.leaf_of(t2, m2[pair[1]])
            return append_op(t2, t1, path, pos, marks1[m1[pair[0]]])
        raise DomainError(f"incompatible fusion pair of kinds {k1}/{k2}")

    def _fuse_two(self, t1, t2, s1, s2, pairs):
        kinds = [self._kinds(s1, s2, p) for p in pairs]
        if all(k == ("green", "green") for k in kinds) or all(
            k[0] != "blue" and k[1] != "blue" for k in kinds
        ):
            m1 = self.align(s1, t1)
            m2 = self.align(s2, t2)
            marks1 = self.marks_of(t1)
            marks2 = self.marks_of(t2)
            return join2_op(
                t1,
                t2,
                (marks1[m1[pairs[0][0]]], marks1[m1[pairs[1][0]]]),
                (marks2[m2[pairs[0][1]]], marks2[m2[pairs[1][1]]]),
                self.scheme,
                self.specials,
            )
        if {kinds[0], kinds[1]} == {("red", "blue"), ("blue", "red")}:
            if kinds[0] == ("red", "blue"):
                red_b, blue_r = pairs[0], pairs[1]
            else:
                red_b, blue_r = pairs[1], pairs[0]
            m1 = self.align(s1, t1)
            marks1 = self.marks_of(t1)
            cm = marks1[m1[red_b[0]]]
            t2 = self.remap_marks(t2, sort_of(t1) | {cm})
            m2 = self.align(s2, t2)
            marks2 = self.marks_of(t2)
            path2, pos2 = self.leaf_of(t2, m2[red_b[1]])
            labeled = label_op(t2, path2, pos2, cm)
            cp = marks2[m2[blue_r[1]]]
            path1, pos1 = self.leaf_of(t1, m1[blue_r[0]])
            appended = self._append_mu3(t1, labeled, path1, pos1, cp, cm)
            return forget_term({cm}, appended)
        raise DomainError(
            f"2-generated matching of kinds {kinds} never occurs in a conforming closure"
        )

    def _append_mu3(self, t1, t2, leaf, k, cp, cm):
        node = t1.at(leaf).node
        labeled = label_op(Term(node), (), k, cp)
        shared = sort_of(labeled) & sort_of(t2)
        if not shared <= {cp, cm}:
            extra = sorted(shared - {cp, cm})[0]
            raise UndefinedOperation(
                f"leaf and appended term share constant {extra}", blocking=extra
            )
        sub = forget_term({cp}, compose_terms(labeled, t2))
        return replace_subterm(t1, leaf, sub)

    def _validate(self, d: Derivation, term: Term):
        want = canonical_form(_as_sig2(derived_structure(d, self.sig), self.sig2))
        got = canonical_form(self.plain_value(term))
        if want != got:
            raise DomainError("witness term does not evaluate to the derived structure")


def _as_sig2(s: Structure, sig2: Signature) -> Structure:
    return Structure(sig2, s.size, s.rel, s.const)


def witness_term_for_derivation(
    d: Derivation,
    sig: Signature,
    scheme: RGBScheme,
    specials: SpecialConstants | None = None,
) -> Term:
    """A term over base and special constants whose value, after the
    special constants are forgotten, is the derived structure; every red
    and green element stays designated by a matching special constant."""
    specials = specials or SpecialConstants.make(sig.colors, scheme)
    return _WitnessBuilder(sig, scheme, specials).build(d)
