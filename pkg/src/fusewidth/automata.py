"""Bottom-up tree automata over finite term signatures, plus the two
static analyses the decision pipeline needs: state annotation with final
constant colors (guess-and-check splitting) and a connectivity verifier.

Automata are nondeterministic throughout; no determinization is ever
performed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .algebra import (
    AtomSym,
    ComposeSym,
    ForgetSym,
    FunctionSymbol,
    RenameSym,
    Term,
    parse_sexpr,
)
from .core import Signature
from .errors import DomainError, ParseError, SortError


@dataclass(frozen=True)
class Rule:
    lhs: tuple
    op: FunctionSymbol
    rhs: object

    def __post_init__(self):
        object.__setattr__(self, "lhs", tuple(self.lhs))


class TreeAutomaton:
    """States, final states and ranked transition rules; rule sorts must
    assign every state one consistent sort."""

    __slots__ = ("sig", "states", "finals", "rules", "_sorts", "_key")

    def __init__(self, sig: Signature, states: Iterable, finals: Iterable, rules: Iterable[Rule]):
        sts = frozenset(states)
        fin = frozenset(finals)
        rls = frozenset(rules)
        if not fin <= sts:
            raise DomainError("final states must be states")
        sorts: dict = {}

        def assign(q, sort):
            if q not in sts:
                raise DomainError(f"rule mentions unknown state {q!r}")
            if q in sorts and sorts[q] != sort:
                raise SortError(
                    f"state {q!r} has conflicting sorts {sorted(sorts[q])} and {sorted(sort)}"
                )
            sorts[q] = sort

        for r in rls:
            if len(r.lhs) != r.op.arity:
                raise SortError(f"rule arity mismatch for {r.op!r}")
            assign(r.rhs, r.op.sort())
            for q, sort in zip(r.lhs, r.op.arg_sorts()):
                assign(q, sort)
        object.__setattr__(self, "sig", sig)
        object.__setattr__(self, "states", sts)
        object.__setattr__(self, "finals", fin)
        object.__setattr__(self, "rules", rls)
        object.__setattr__(self, "_sorts", sorts)
        object.__setattr__(self, "_key", (sig, sts, fin, rls))

    def __setattr__(self, *a):
        raise AttributeError("TreeAutomaton is immutable")

    def __eq__(self, other):
        return isinstance(other, TreeAutomaton) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"TreeAutomaton({len(self.states)} states, {len(self.rules)} rules, {len(self.finals)} finals)"

    def state_sort(self, q) -> frozenset | None:
        return self._sorts.get(q)

    def rules_by_op_kind(self):
        atoms, unary, binary = [], [], []
        for r in self.rules:
            if isinstance(r.op, AtomSym):
                atoms.append(r)
            elif isinstance(r.op, ComposeSym):
                binary.append(r)
            else:
                unary.append(r)
        return atoms, unary, binary


def run(a: TreeAutomaton, t: Term) -> frozenset:
    """All states labeling the root of some run over ``t``."""
    child_states = [run(a, c) for c in t.children]
    out = set()
    for r in a.rules:
        if r.op != t.node:
            continue
        if all(q in states for q, states in zip(r.lhs, child_states)):
            out.add(r.rhs)
    return frozenset(out)


def accepts(a: TreeAutomaton, t: Term) -> bool:
    return bool(run(a, t) & a.finals)


def is_empty(a: TreeAutomaton) -> bool:
    """True iff no term is accepted (reachability fixpoint)."""
    reachable: set = set()
    changed = True
    while changed:
        changed = False
        for r in a.rules:
            if r.rhs not in reachable and all(q in reachable for q in r.lhs):
                reachable.add(r.rhs)
                changed = True
    return not (reachable & a.finals)


def enumerate_terms(a: TreeAutomaton, depth: int) -> frozenset:
    """Exactly the accepted terms of height at most ``depth``."""
    if depth < 1:
        raise DomainError("depth must be >= 1")
    by_state: dict = {q: set() for q in a.states}
    for _ in range(depth):
        added = False
        for r in a.rules:
            for combo in itertools.product(*(sorted(by_state[q], key=repr) for q in r.lhs)):
                t = Term(r.op, combo)
                if t.height() <= depth and t not in by_state[r.rhs]:
                    by_state[r.rhs].add(t)
                    added = True
        if not added:
            break
    out = set()
    for q in a.finals:
        out |= by_state[q]
    return frozenset(out)


# -- JSON and grammar input/output -------------------------------------------


def op_to_json(op: FunctionSymbol) -> dict:
    if isinstance(op, AtomSym):
        return {"kind": "atom", "rel": op.rel, "args": [sorted(c) for c in op.arg_sets]}
    if isinstance(op, ComposeSym):
        return {"kind": "compose", "left": sorted(op.left), "right": sorted(op.right)}
    if isinstance(op, RenameSym):
        return {"kind": "rename", "map": {a: b for a, b in op.mapping}}
    if isinstance(op, ForgetSym):
        return {"kind": "forget", "drop": sorted(op.drop), "sort": sorted(op.domain)}
    raise DomainError(f"unknown symbol {op!r}")


def op_from_json(data: dict) -> FunctionSymbol:
    kind = data.get("kind")
    if kind == "atom":
        return AtomSym(data["rel"], tuple(frozenset(c) for c in data["args"]))
    if kind == "compose":
        return ComposeSym(frozenset(data["left"]), frozenset(data["right"]))
    if kind == "rename":
        return RenameSym(tuple(sorted(data["map"].items())))
    if kind == "forget":
        return ForgetSym(frozenset(data["drop"]), frozenset(data["sort"]))
    raise ParseError(f"unknown op kind {kind!r}")


def automaton_to_json(a: TreeAutomaton) -> dict:
    names = {q: f"q{i}" for i, q in enumerate(sorted(a.states, key=repr))}
    return {
        "signature": a.sig.to_json(),
        "states": sorted(names.values()),
        "finals": sorted(names[q] for q in a.finals),
        "rules": sorted(
            (
                {
                    "lhs": [names[q] for q in r.lhs],
                    "op": op_to_json(r.op),
                    "rhs": names[r.rhs],
                }
                for r in a.rules
            ),
            key=lambda d: json.dumps(d, sort_keys=True),
        ),
    }


def automaton_from_json(data: dict) -> TreeAutomaton:
    sig = Signature.from_json(data["signature"])
    rules = [
        Rule(tuple(r["lhs"]), op_from_json(r["op"]), r["rhs"]) for r in data["rules"]
    ]
    return TreeAutomaton(sig, data["states"], data["finals"], rules)


def parse_grammar(text: str) -> TreeAutomaton:
    """Parse the grammar sugar: declaration lines (``colors``, ``rel``,
    ``constants``, ``axiom``) followed by rules ``q <- (op ...)`` whose
    child slots hold state names or nested operator expressions (nested
    ones desugar through fresh states)."""
    relations: dict[str, int] = {}
    colors: list[str] = []
    constants: list[str] = []
    axioms: list[str] = []
    raw_rules: list[tuple[str, str, int]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        head, _, rest = stripped.partition(" ")
        if head == "colors":
            colors += rest.split()
        elif head == "rel":
            parts = rest.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError("rel expects a name and an arity", lineno, 1)
            relations[parts[0]] = int(parts[1])
        elif head == "constants":
            constants += rest.split()
        elif head == "axiom":
            axioms += rest.split()
        elif "<-" in stripped:
            target, _, body = stripped.partition("<-")
            target = target.strip()
            if not target:
                raise ParseError("rule without a target state", lineno, 1)
            raw_rules.append((target, body.strip(), lineno))
        else:
            raise ParseError(f"unrecognized line {stripped!r}", lineno, 1)
    for c in colors:
        relations.setdefault(c, 1)
    sig = Signature(relations, colors, constants)

    # desugared rule skeletons: (target, kind, params, children)
    skeletons: list[tuple] = []
    counter = itertools.count()

    def walk(expr, target, lineno):
        items, line, col = expr
        if not isinstance(items, list):
            raise ParseError("rule body must be an operator expression", line, col)
        if not items:
            raise ParseError("empty operator expression", line, col)
        head = items[0][0]
        if head == "atom":
            rel = items[1][0]
            sets = []
            for sub in items[2:]:
                names, _, _ = sub if isinstance(sub[0], list) else (None, sub[1], sub[2])
                if names is None:
                    raise ParseError("atom arguments must be constant sets", sub[1], sub[2])
                sets.append(frozenset(x[0] for x in names))
            skeletons.append((target, "atom", (rel, tuple(sets)), ()))
            return
        if head in ("compose", "rename", "forget"):
            if head == "compose":
                subexprs = items[1:]
                params = None
            elif head == "rename":
                pairs = items[1][0]
                moves = tuple((p[0][0][0], p[0][1][0]) for p in pairs)
                params = moves
                subexprs = items[2:]
            else:
                drop = frozenset(x[0] for x in items[1][0])
                params = drop
                subexprs = items[2:]
            expected = 2 if head == "compose" else 1
            if len(subexprs) != expected:
                raise ParseError(f"{head} takes {expected} subterm(s)", line, col)
            children = []
            for sub in subexprs:
                if isinstance(sub[0], list):
                    fresh = f"%{next(counter)}"
                    walk(sub, fresh, lineno)
                    children.append(fresh)
                else:
                    children.append(sub[0])
            skeletons.append((target, head, params, tuple(children)))
            return
        raise ParseError(f"unknown operator {head!r}", line, col)

    for target, body, lineno in raw_rules:
        try:
            expr = parse_sexpr(body)
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from None
        walk(expr, target, lineno)

    # infer state sorts bottom-up
    sorts: dict[str, frozenset] = {}
    changed = True
    while changed:
        changed = False
        for target, kind, params, children in skeletons:
            if kind == "atom":
                sort = frozenset().union(*params[1])
            elif all(c in sorts for c in children):
                if kind == "compose":
                    sort = sorts[children[0]] | sorts[children[1]]
                elif kind == "rename":
                    moves = dict(params)
                    sort = frozenset(moves.get(c, c) for c in sorts[children[0]])
                else:
                    sort = sorts[children[0]] - params
            else:
                continue
            if target in sorts:
                if sorts[target] != sort:
                    raise SortError(
                        f"state {target!r} has conflicting sorts "
                        f"{sorted(sorts[target])} and {sorted(sort)}"
                    )
            else:
                sorts[target] = sort
                changed = True

    states = {t for t, *_ in skeletons}
    states.update(c for *_, children in skeletons for c in children)
    states.update(axioms)
    missing = sorted(q for q in states if q not in sorts)
    if missing:
        raise ParseError(f"states with no producing rule: {missing}")

    rules = []
    for target, kind, params, children in skeletons:
        if kind == "atom":
            op: FunctionSymbol = AtomSym(params[0], params[1])
        elif kind == "compose":
            op = ComposeSym(sorts[children[0]], sorts[children[1]])
        elif kind == "rename":
            moves = dict(params)
            full = {c: moves.get(c, c) for c in sorts[children[0]]}
            op = RenameSym(tuple(sorted(full.items())))
        else:
            op = ForgetSym(params, sorts[children[0]])
        rules.append(Rule(children, op, target))
    return TreeAutomaton(sig, states, axioms, rules)


def load_automaton(text: str) -> TreeAutomaton:
    """Accept either the JSON schema or the grammar sugar."""
    if text.lstrip().startswith("{"):
        return automaton_from_json(json.loads(text))
    return parse_grammar(text)


# -- annotation: guessed final colors, leaf flags, structure types -----------


@dataclass(frozen=True)
class ClassInfo:
    """One class of co-interpreted visible constants: the color gathered
    so far and the guessed color in the final structure."""

    consts: frozenset
    current: frozenset
    guess: frozenset


@dataclass(frozen=True)
class AnnState:
    base: object
    classes: tuple[ClassInfo, ...]
    red_hidden: int
    green_hidden: int
    leaf: bool

    def class_map(self) -> dict[frozenset, frozenset]:
        return {c.consts: c.guess for c in self.classes}


def _canon_classes(classes: Iterable[ClassInfo]) -> tuple[ClassInfo, ...]:
    return tuple(sorted(classes, key=lambda c: sorted(c.consts)))


class AnnotatedAutomaton:
    """Language-preserving refinement of an automaton whose states carry
    the guessed final color of every visible constant class, a leaf flag,
    and hidden red/green counters for the structure type.

    Wrong guesses yield no transition, so in every accepting run over a
    sort-empty term the guesses equal the true final colors.
    """

    def __init__(self, automaton: TreeAutomaton, scheme, base: TreeAutomaton):
        self.automaton = automaton
        self.scheme = scheme
        self.base = base

    def const_color(self, state: AnnState) -> dict[frozenset, frozenset]:
        return state.class_map()

    def leaf_flag(self, state: AnnState) -> bool:
        return state.leaf

    def type_tag(self, state: AnnState) -> str:
        reds = state.red_hidden + sum(1 for c in state.classes if c.guess in self.scheme.red)
        greens = state.green_hidden + sum(1 for c in state.classes if c.guess in self.scheme.green)
        reds = min(reds, 2)
        greens = min(greens, 1)
        if reds == 0 and greens == 0:
            return "B"
        if reds == 1 and greens == 0:
            return "R"
        if reds == 0:
            return "G"
        return "OTHER"

    def erased(self) -> TreeAutomaton:
        rules = {
            Rule(tuple(q.base for q in r.lhs), r.op, r.rhs.base)
            for r in self.automaton.rules
        }
        states = {q.base for q in self.automaton.states}
        finals = {q.base for q in self.automaton.finals}
        return TreeAutomaton(self.base.sig, states, finals, rules)


def _guess_supersets(current: frozenset, alphabet: frozenset):
    extra = sorted(alphabet - current)
    for k in range(len(extra) + 1):
        for combo in itertools.combinations(extra, k):
            yield current | frozenset(combo)


def annotate(a: TreeAutomaton, scheme) -> AnnotatedAutomaton:
    """Split states so each copy carries consistent annotations; the
    erased language is unchanged."""
    alphabet = frozenset(a.sig.colors)
    red, green = scheme.red, scheme.green
    atoms, unary, binary = a.rules_by_op_kind()

    states: set[AnnState] = set()
    rules: set[Rule] = set()
    queue: list[AnnState] = []

    def emit(lhs, op, target: AnnState):
        rules.add(Rule(lhs, op, target))
        if target not in states:
            states.add(target)
            queue.append(target)

    for r in atoms:
        op: AtomSym = r.op
        distinct: list[frozenset] = []
        for c in op.arg_sets:
            if c not in distinct:
                distinct.append(c)
        currents = []
        for c in distinct:
            cur = frozenset({op.rel}) if op.rel in alphabet else frozenset()
            currents.append(cur)
        for guesses in itertools.product(
            *(_guess_supersets(cur, alphabet) for cur in currents)
        ):
            classes = _canon_classes(
                ClassInfo(c, cur, g) for c, cur, g in zip(distinct, currents, guesses)
            )
            emit((), op, AnnState(r.rhs, classes, 0, 0, True))

    by_base: dict = {}

    def index(st: AnnState):
        by_base.setdefault(st.base, set()).add(st)

    def forget_succ(st: AnnState, drop: frozenset):
        classes = []
        red_h, green_h = st.red_hidden, st.green_hidden
        for c in st.classes:
            remaining = c.consts - drop
            if remaining:
                classes.append(ClassInfo(remaining, c.current, c.guess))
            else:
                if c.current != c.guess:
                    return None
                if c.guess in red:
                    red_h = min(2, red_h + 1)
                elif c.guess in green:
                    green_h = min(1, green_h + 1)
        return AnnState(st.base, _canon_classes(classes), red_h, green_h, False)

    def rename_succ(st: AnnState, alpha: dict):
        images = []
        for c in st.classes:
            images.append(frozenset(alpha[x] for x in c.consts))
        for i in range(len(images)):
            for j in range(i + 1, len(images)):
                if images[i] & images[j]:
                    return None
        classes = [
            ClassInfo(img, c.current, c.guess) for img, c in zip(images, st.classes)
        ]
        return AnnState(st.base, _canon_classes(classes), st.red_hidden, st.green_hidden, False)

    def compose_succ(s1: AnnState, s2: AnnState, rhs):
        all_classes = list(s1.classes) + list(s2.classes)
        uf_parent = list(range(len(all_classes)))

        def find(i):
            while uf_parent[i] != i:
                uf_parent[i] = uf_parent[uf_parent[i]]
                i = uf_parent[i]
            return i

        owner: dict[str, int] = {}
        for i, c in enumerate(all_classes):
            for name in c.consts:
                if name in owner:
                    uf_parent[find(i)] = find(owner[name])
                else:
                    owner[name] = i
        merged: dict[int, list[ClassInfo]] = {}
        for i, c in enumerate(all_classes):
            merged.setdefault(find(i), []).append(c)
        classes = []
        for group in merged.values():
            consts = frozenset().union(*(c.consts for c in group))
            current = frozenset().union(*(c.current for c in group))
            guesses = {c.guess for c in group}
            if len(guesses) != 1:
                return None
            guess = next(iter(guesses))
            if not current <= guess:
                return None
            classes.append(ClassInfo(consts, current, guess))
        return AnnState(
            rhs,
            _canon_classes(classes),
            min(2, s1.red_hidden + s2.red_hidden),
            min(1, s1.green_hidden + s2.green_hidden),
            False,
        )

    processed: set[AnnState] = set()
    while queue:
        st = queue.pop()
        if st in processed:
            continue
        processed.add(st)
        index(st)
        for r in unary:
            if r.lhs[0] != st.base:
                continue
            if isinstance(r.op, ForgetSym):
                succ = forget_succ(st, r.op.drop)
            else:
                succ = rename_succ(st, r.op.map())
            if succ is not None:
                succ = AnnState(r.rhs, succ.classes, succ.red_hidden, succ.green_hidden, False)
                emit((st,), r.op, succ)
        for r in binary:
            for side, other_base in ((0, r.lhs[1]), (1, r.lhs[0])):
                if r.lhs[side] != st.base:
                    continue
                for other in list(by_base.get(other_base, ())):
                    pair = (st, other) if side == 0 else (other, st)
                    succ = compose_succ(pair[0], pair[1], r.rhs)
                    if succ is not None:
                        emit(pair, r.op, succ)

    finals = {st for st in states if st.base in a.finals}
    ann = TreeAutomaton(a.sig, states, finals, rules)
    return AnnotatedAutomaton(ann, scheme, a)


# -- connectivity verification -----------------------------------------------


@dataclass(frozen=True)
class ConnInfo:
    """Per-state connectivity abstraction: the partition of visible
    constants by element identity, the coarser partition by Gaifman
    component, and the number of components with no visible constant
    left (capped at 2, since orphaned components never rejoin)."""

    classes: frozenset
    components: frozenset
    orphans: int

    def total_components(self) -> int:
        return len(self.components) + self.orphans


def _partition_canon(blocks: Iterable[frozenset]) -> frozenset:
    return frozenset(frozenset(b) for b in blocks if b)


def _merge_partitions(blocks: Iterable[frozenset]) -> list[set]:
    groups: list[set] = []
    for b in blocks:
        touching = [g for g in groups if g & b]
        merged = set(b)
        for g in touching:
            merged |= g
            groups.remove(g)
        groups.append(merged)
    return groups


def verify_all_connected(a: TreeAutomaton):
    """Decide whether every structure in the automaton's evaluated
    language is connected; returns ``(True, None)`` or ``(False, term)``
    with a counterexample term of minimal discovered height."""
    atoms, unary, binary = a.rules_by_op_kind()
    info: dict = {}
    queue: list[tuple] = []

    def emit(q, value: ConnInfo, term: Term):
        key = (q, value)
        if key not in info:
            info[key] = term
            queue.append(key)

    for r in atoms:
        op: AtomSym = r.op
        distinct = []
        for c in op.arg_sets:
            if c not in distinct:
                distinct.append(c)
        value = ConnInfo(
            _partition_canon(distinct),
            _partition_canon([op.sort()]) or frozenset(),
            0 if op.sort() else 1,
        )
        emit(r.rhs, value, Term(op))

    def forget_val(v: ConnInfo, drop: frozenset):
        classes = _partition_canon(c - drop for c in v.classes)
        orphans = v.orphans
        comps = []
        for comp in v.components:
            rest = comp - drop
            if rest:
                comps.append(rest)
            else:
                orphans = min(2, orphans + 1)
        return ConnInfo(classes, _partition_canon(comps), orphans)

    def rename_val(v: ConnInfo, alpha: dict):
        images = [frozenset(alpha[x] for x in c) for c in v.classes]
        for i in range(len(images)):
            for j in range(i + 1, len(images)):
                if images[i] & images[j]:
                    return None
        comps = [frozenset(alpha[x] for x in comp) for comp in v.components]
        return ConnInfo(_partition_canon(images), _partition_canon(comps), v.orphans)

    def compose_val(v1: ConnInfo, v2: ConnInfo):
        classes = _merge_partitions(list(v1.classes) + list(v2.classes))
        comps = _merge_partitions(list(v1.components) + list(v2.components))
        return ConnInfo(
            _partition_canon(classes),
            _partition_canon(comps),
            min(2, v1.orphans + v2.orphans),
        )

    by_state: dict = {}
    processed: set = set()
    while queue:
        key = queue.pop(0)
        if key in processed:
            continue
        processed.add(key)
        q, v = key
        term = info[key]
        if q in a.finals and v.total_components() != 1:
            return False, term
        by_state.setdefault(q, []).append((v, term))
        for r in unary:
            if r.lhs[0] != q:
                continue
            if isinstance(r.op, ForgetSym):
                succ = forget_val(v, r.op.drop)
            else:
                succ = rename_val(v, r.op.map())
            if succ is not None:
                emit(r.rhs, succ, Term(r.op, (term,)))
        for r in binary:
            for side, other_state in ((0, r.lhs[1]), (1, r.lhs[0])):
                if r.lhs[side] != q:
                    continue
                for v2, t2 in list(by_state.get(other_state, ())):
                    pair = ((v, term), (v2, t2)) if side == 0 else ((v2, t2), (v, term))
                    succ = compose_val(pair[0][0], pair[1][0])
                    emit(r.rhs, succ, Term(r.op, (pair[0][1], pair[1][1])))
    return True, None
