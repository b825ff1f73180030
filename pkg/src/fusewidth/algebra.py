"""Terms over the structure-building algebra: atoms, glueing composition,
constant renaming and forgetting.

Every function symbol carries its sorts explicitly; the parser infers them
and the printer elides them.  Evaluation follows the four interpretation
clauses: an atom builds one tuple whose positions share an element exactly
when their constant sets are equal, composition glues at shared constants,
renaming re-keys the constant interpretation, forgetting drops it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

from .core import Signature, Structure, _UnionFind, compose
from .errors import DomainError, EvalError, ParseError, SortError


def _fs(items: Iterable[str]) -> frozenset:
    return frozenset(items)


@dataclass(frozen=True)
class AtomSym:
    """Leaf symbol ``r(C1,...,Ck)``: one tuple over fresh elements, equal
    positions merged, each constant in ``Ci`` naming position ``i``."""

    rel: str
    arg_sets: tuple[frozenset, ...]

    def __post_init__(self):
        sets = tuple(_fs(c) for c in self.arg_sets)
        object.__setattr__(self, "arg_sets", sets)
        for c in sets:
            if not c:
                raise DomainError("atom constant sets must be nonempty")
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                if sets[i] != sets[j] and sets[i] & sets[j]:
                    raise DomainError(
                        f"atom sets must be equal or disjoint: {sorted(sets[i])} vs {sorted(sets[j])}"
                    )

    arity = 0

    def arg_sorts(self) -> tuple:
        return ()

    def sort(self) -> frozenset:
        out: frozenset = frozenset()
        for c in self.arg_sets:
            out |= c
        return out


@dataclass(frozen=True)
class ComposeSym:
    """Binary glueing ``C,C' -> C u C'``."""

    left: frozenset
    right: frozenset

    def __post_init__(self):
        object.__setattr__(self, "left", _fs(self.left))
        object.__setattr__(self, "right", _fs(self.right))

    arity = 2

    def arg_sorts(self) -> tuple:
        return (self.left, self.right)

    def sort(self) -> frozenset:
        return self.left | self.right


@dataclass(frozen=True)
class RenameSym:
    """Unary renaming by a total map on the argument sort; the value sort
    is the image (so the map is surjective onto it by construction)."""

    mapping: tuple[tuple[str, str], ...]

    def __post_init__(self):
        m = dict(self.mapping)
        if len(m) != len(tuple(self.mapping)):
            raise DomainError("rename maps a constant twice")
        object.__setattr__(self, "mapping", tuple(sorted(m.items())))

    arity = 1

    def map(self) -> dict[str, str]:
        return dict(self.mapping)

    def arg_sorts(self) -> tuple:
        return (frozenset(a for a, _ in self.mapping),)

    def sort(self) -> frozenset:
        return frozenset(b for _, b in self.mapping)


@dataclass(frozen=True)
class ForgetSym:
    """Unary forgetting of ``drop`` from the argument sort ``domain``."""

    drop: frozenset
    domain: frozenset

    def __post_init__(self):
        object.__setattr__(self, "drop", _fs(self.drop))
        object.__setattr__(self, "domain", _fs(self.domain))
        if not self.drop <= self.domain:
            raise DomainError("forget set must be contained in the sort")

    arity = 1

    def arg_sorts(self) -> tuple:
        return (self.domain,)

    def sort(self) -> frozenset:
        return self.domain - self.drop


FunctionSymbol = AtomSym | ComposeSym | RenameSym | ForgetSym


@dataclass(frozen=True)
class Term:
    node: FunctionSymbol
    children: tuple["Term", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    def height(self) -> int:
        return 1 + max((c.height() for c in self.children), default=0)

    def positions(self):
        yield ()
        for i, c in enumerate(self.children):
            for p in c.positions():
                yield (i,) + p

    def at(self, path: tuple[int, ...]) -> "Term":
        t = self
        for i in path:
            t = t.children[i]
        return t


def atom(rel: str, *arg_sets) -> Term:
    return Term(AtomSym(rel, tuple(frozenset(c) for c in arg_sets)))


def compose_terms(t1: Term, t2: Term) -> Term:
    return Term(ComposeSym(sort_of(t1), sort_of(t2)), (t1, t2))


def rename_term(moves: Mapping[str, str], t: Term) -> Term:
    """Rename with identity extension on the unmentioned constants."""
    dom = sort_of(t)
    bad = set(moves) - dom
    if bad:
        raise SortError(f"rename of constants {sorted(bad)} absent from sort")
    full = {c: moves.get(c, c) for c in dom}
    return Term(RenameSym(tuple(full.items())), (t,))


def forget_term(drop: Iterable[str], t: Term) -> Term:
    return Term(ForgetSym(frozenset(drop), sort_of(t)), (t,))


@dataclass(frozen=True)
class SortCheck:
    ok: bool
    sort: frozenset | None
    position: tuple[int, ...] | None = None
    message: str = ""


def sort_check(t: Term) -> SortCheck:
    """Check sorts bottom-up; reports the first ill-sorted position
    instead of raising."""
    try:
        return SortCheck(True, sort_of(t))
    except SortError as e:
        return SortCheck(False, None, e.position, str(e))


@lru_cache(maxsize=None)
def sort_of(t: Term) -> frozenset:
    n = t.node
    if len(t.children) != n.arity:
        raise SortError(f"{type(n).__name__} expects {n.arity} children", ())
    for i, (child, expect) in enumerate(zip(t.children, n.arg_sorts())):
        try:
            got = sort_of(child)
        except SortError as e:
            raise SortError(str(e), (i,) + (e.position or ())) from None
        if got != expect:
            raise SortError(
                f"argument sort {sorted(got)} differs from declared {sorted(expect)}",
                (i,),
            )
    return n.sort()


def eval_term(t: Term, sig: Signature) -> Structure:
    """Value of a ground well-sorted term."""
    return _eval(t, sig, ())


def _eval(t: Term, sig: Signature, path: tuple[int, ...]) -> Structure:
    n = t.node
    if isinstance(n, AtomSym):
        if n.rel not in sig.relations:
            raise SortError(f"unknown relation {n.rel!r}", path)
        ar = sig.arity(n.rel)
        if len(n.arg_sets) != ar:
            raise SortError(f"atom {n.rel!r} expects {ar} constant sets", path)
        distinct = []
        for c in n.arg_sets:
            if c not in distinct:
                distinct.append(c)
        elem = {c: i for i, c in enumerate(distinct)}
        tup = tuple(elem[c] for c in n.arg_sets)
        const = {name: elem[c] for c in distinct for name in c}
        return Structure(sig, len(distinct), {n.rel: [tup]}, const)
    if isinstance(n, ComposeSym):
        s1 = _eval(t.children[0], sig, path + (0,))
        s2 = _eval(t.children[1], sig, path + (1,))
        _expect(s1.sort, n.left, path + (0,))
        _expect(s2.sort, n.right, path + (1,))
        return compose(s1, s2)
    if isinstance(n, RenameSym):
        s = _eval(t.children[0], sig, path + (0,))
        alpha = n.map()
        _expect(s.sort, frozenset(alpha), path + (0,))
        const: dict[str, int] = {}
        for c, e in s.const.items():
            target = alpha[c]
            if target in const and const[target] != e:
                raise EvalError(
                    f"rename collapses {target!r} onto two distinct elements"
                )
            const[target] = e
        return Structure(sig, s.size, s.rel, const)
    if isinstance(n, ForgetSym):
        s = _eval(t.children[0], sig, path + (0,))
        _expect(s.sort, n.domain, path + (0,))
        const = {c: e for c, e in s.const.items() if c not in n.drop}
        return Structure(sig, s.size, s.rel, const)
    raise SortError(f"unknown symbol {n!r}", path)


def _expect(got: frozenset, want: frozenset, path):
    if got != want:
        raise SortError(
            f"subterm has sort {sorted(got)}, symbol expects {sorted(want)}", path
        )


def eval_term_traced(t: Term, sig: Signature):
    """Evaluate and report, per element, the set of (leaf path, 1-based
    position) origins it was built from."""
    struct, origins = _eval_traced(t, sig, ())
    return struct, origins


def _eval_traced(t: Term, sig: Signature, path):
    n = t.node
    if isinstance(n, AtomSym):
        s = _eval(t, sig, path)
        origins = {u: frozenset() for u in s.universe()}
        distinct = []
        for c in n.arg_sets:
            if c not in distinct:
                distinct.append(c)
        for i, c in enumerate(n.arg_sets):
            origins[distinct.index(c)] |= {(path, i + 1)}
        return s, origins
    if isinstance(n, ComposeSym):
        from .core import _compose_map

        s1, o1 = _eval_traced(t.children[0], sig, path + (0,))
        s2, o2 = _eval_traced(t.children[1], sig, path + (1,))
        result, left, right = _compose_map(s1, s2)
        origins = {u: frozenset() for u in result.universe()}
        for u, os_ in o1.items():
            origins[left[u]] |= os_
        for u, os_ in o2.items():
            origins[right[u]] |= os_
        return result, origins
    s, origins = _eval_traced(t.children[0], sig, path + (0,))
    return _eval(t, sig, path), origins


def constants_in(t: Term) -> frozenset:
    """Every constant name occurring anywhere in the term."""
    out: set[str] = set()
    n = t.node
    if isinstance(n, AtomSym):
        for c in n.arg_sets:
            out |= c
    elif isinstance(n, RenameSym):
        for a, b in n.mapping:
            out |= {a, b}
    elif isinstance(n, ForgetSym):
        out |= n.drop
    for c in t.children:
        out |= constants_in(c)
    return frozenset(out)


@dataclass(frozen=True)
class ConstantPool:
    """Canonical enumeration ``c0,c1,...`` covering a term family's
    constants; free constant names are mapped injectively into it."""

    names: tuple[str, ...]

    @classmethod
    def of(cls, terms: Iterable[Term]) -> "ConstantPool":
        used: set[str] = set()
        for t in terms:
            used |= constants_in(t)
        return cls(tuple(sorted(used)))

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


def term_width_bound(t: Term) -> int:
    """Smallest k with all of the term's constants inside ``{c0..ck}``
    after normalizing names through the pool; upper-bounds the value's
    tree-width."""
    return max(0, len(constants_in(t)) - 1)


# -- s-expression reader/printer ---------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokenize(text: str):
    line, col = 1, 1
    pos = 0
    tokens = []
    for m in _TOKEN.finditer(text):
        for ch in text[pos : m.start()]:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = m.start()
        tokens.append((m.group(), line, col))
        for ch in m.group():
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        pos = m.end()
    return tokens


def _strip_comments(text: str) -> str:
    return "\n".join(ln.split("#", 1)[0] for ln in text.splitlines())


def _read_sexpr(tokens, i):
    if i >= len(tokens):
        raise ParseError("unexpected end of input")
    tok, line, col = tokens[i]
    if tok == "(":
        items = []
        i += 1
        while True:
            if i >= len(tokens):
                raise ParseError("unclosed '('", line, col)
            if tokens[i][0] == ")":
                return (items, line, col), i + 1
            item, i = _read_sexpr(tokens, i)
            items.append(item)
    if tok == ")":
        raise ParseError("unexpected ')'", line, col)
    return (tok, line, col), i


def parse_sexpr(text: str):
    tokens = _tokenize(_strip_comments(text))
    expr, i = _read_sexpr(tokens, 0)
    if i != len(tokens):
        tok, line, col = tokens[i]
        raise ParseError(f"trailing input {tok!r}", line, col)
    return expr


def parse_term(text: str) -> Term:
    """Parse the s-expression term grammar:
    ``(atom R (c..)+) | (compose T T) | (rename ((from to)..) T) | (forget (c..) T)``.
    """
    return _build_term(parse_sexpr(text))


def _as_list(expr, what):
    items, line, col = expr
    if not isinstance(items, list):
        raise ParseError(f"expected {what}, got {items!r}", line, col)
    return items, line, col


def _as_name(expr, what):
    val, line, col = expr
    if isinstance(val, list):
        raise ParseError(f"expected {what}", line, col)
    return val, line, col


def _build_term(expr) -> Term:
    items, line, col = _as_list(expr, "a term")
    if not items:
        raise ParseError("empty term", line, col)
    head, hline, hcol = _as_name(items[0], "an operator")
    try:
        if head == "atom":
            if len(items) < 3:
                raise ParseError("atom needs a relation and constant sets", hline, hcol)
            rel, _, _ = _as_name(items[1], "a relation name")
            sets = []
            for sub in items[2:]:
                names, _, _ = _as_list(sub, "a constant set")
                sets.append(frozenset(_as_name(x, "a constant")[0] for x in names))
            return Term(AtomSym(rel, tuple(sets)))
        if head == "compose":
            if len(items) != 3:
                raise ParseError("compose takes two subterms", hline, hcol)
            t1 = _build_term(items[1])
            t2 = _build_term(items[2])
            return compose_terms(t1, t2)
        if head == "rename":
            if len(items) != 3:
                raise ParseError("rename takes a pair list and a subterm", hline, hcol)
            pairs, _, _ = _as_list(items[1], "a pair list")
            moves = {}
            for p in pairs:
                pair, pl, pc = _as_list(p, "a (from to) pair")
                if len(pair) != 2:
                    raise ParseError("rename pair must have two names", pl, pc)
                a, _, _ = _as_name(pair[0], "a constant")
                b, _, _ = _as_name(pair[1], "a constant")
                if a in moves:
                    raise ParseError(f"constant {a!r} renamed twice", pl, pc)
                moves[a] = b
            return rename_term(moves, _build_term(items[2]))
        if head == "forget":
            if len(items) != 3:
                raise ParseError("forget takes a constant set and a subterm", hline, hcol)
            names, _, _ = _as_list(items[1], "a constant set")
            drop = frozenset(_as_name(x, "a constant")[0] for x in names)
            return forget_term(drop, _build_term(items[2]))
    except (DomainError, SortError) as e:
        raise ParseError(str(e), hline, hcol) from None
    raise ParseError(f"unknown operator {head!r}", hline, hcol)


def format_term(t: Term) -> str:
    """Deterministic printer; ``parse_term(format_term(t)) == t``."""
    n = t.node
    if isinstance(n, AtomSym):
        sets = " ".join("(" + " ".join(sorted(c)) + ")" for c in n.arg_sets)
        return f"(atom {n.rel} {sets})"
    if isinstance(n, ComposeSym):
        return f"(compose {format_term(t.children[0])} {format_term(t.children[1])})"
    if isinstance(n, RenameSym):
        moved = sorted((a, b) for a, b in n.mapping if a != b)
        pairs = " ".join(f"({a} {b})" for a, b in moved)
        return f"(rename ({pairs}) {format_term(t.children[0])})"
    if isinstance(n, ForgetSym):
        drop = " ".join(sorted(n.drop))
        return f"(forget ({drop}) {format_term(t.children[0])})"
    raise DomainError(f"unknown symbol {n!r}")
