"""Multiset color abstractions and the boundedness decision.

The pipeline: abstract the automaton's language into the set of all color
multisets of cardinality <= k that embed into some accepted structure
(a least fixpoint over annotated automaton states), close that set under
single-pair multiset fusion, and read the verdict off the closed set: the
closure of the language under fusion has bounded tree-width iff no two
disjoint colors both occur three times.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import total_ordering
from typing import Iterable, Mapping

from .automata import AtomSym, ForgetSym, TreeAutomaton, verify_all_connected
from .core import Color, Structure, all_colors, color_key, color_name, color_of
from .errors import DomainError, PreconditionError, SortError


@total_ordering
class ColorMultiset:
    """Finite multiset of colors with positive counts."""

    __slots__ = ("counts", "_key")

    def __init__(self, items: Iterable[Color] | Mapping[Color, int] = ()):
        counts: dict = {}
        if isinstance(items, Mapping):
            for c, n in items.items():
                if n < 0:
                    raise DomainError("negative multiplicity")
                if n:
                    counts[frozenset(c)] = counts.get(frozenset(c), 0) + n
        else:
            for c in items:
                counts[frozenset(c)] = counts.get(frozenset(c), 0) + 1
        object.__setattr__(self, "counts", counts)
        object.__setattr__(
            self, "_key", tuple(sorted((color_key(c), n) for c, n in counts.items()))
        )

    def __setattr__(self, *a):
        raise AttributeError("ColorMultiset is immutable")

    def cardinality(self) -> int:
        return sum(self.counts.values())

    def __len__(self):
        return self.cardinality()

    def count(self, color: Color) -> int:
        return self.counts.get(frozenset(color), 0)

    def colors(self):
        return sorted(self.counts, key=color_key)

    def union(self, other: "ColorMultiset") -> "ColorMultiset":
        counts = dict(self.counts)
        for c, n in other.counts.items():
            counts[c] = counts.get(c, 0) + n
        return ColorMultiset(counts)

    def minus(self, other: "ColorMultiset") -> "ColorMultiset":
        counts = dict(self.counts)
        for c, n in other.counts.items():
            counts[c] = counts.get(c, 0) - n
            if counts[c] < 0:
                raise DomainError("multiset difference underflow")
        return ColorMultiset(counts)

    def remove_one(self, color: Color) -> "ColorMultiset":
        return self.minus(ColorMultiset([color]))

    def add_one(self, color: Color) -> "ColorMultiset":
        return self.union(ColorMultiset([color]))

    def submultiset_of(self, other: "ColorMultiset") -> bool:
        return all(n <= other.count(c) for c, n in self.counts.items())

    def submultisets(self, max_card: int | None = None):
        """All sub-multisets, optionally capped in cardinality."""
        cols = self.colors()
        ranges = [range(self.counts[c] + 1) for c in cols]
        for combo in itertools.product(*ranges):
            if max_card is not None and sum(combo) > max_card:
                continue
            yield ColorMultiset({c: n for c, n in zip(cols, combo)})

    def restrict(self, colors: Iterable[Color]) -> "ColorMultiset":
        keep = {frozenset(c) for c in colors}
        return ColorMultiset({c: n for c, n in self.counts.items() if c in keep})

    def __eq__(self, other):
        return isinstance(other, ColorMultiset) and self._key == other._key

    def __lt__(self, other):
        return (self.cardinality(), self._key) < (other.cardinality(), other._key)

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        inner = ", ".join(
            ", ".join([color_name(c)] * n) for c, n in sorted(self.counts.items(), key=lambda kv: color_key(kv[0]))
        )
        return f"[[{inner}]]"

    def to_json(self):
        out = []
        for c in self.colors():
            out += [sorted(c)] * self.counts[c]
        return out


def triple(color: Color) -> ColorMultiset:
    return ColorMultiset([color, color, color])


class AbstractionSet:
    """A k-bounded, downward-closed set of color multisets (closure under
    sub-multisets is enforced on construction)."""

    __slots__ = ("k", "members")

    def __init__(self, k: int, members: Iterable[ColorMultiset] = ()):
        if k < 1:
            raise DomainError("k must be >= 1")
        closed: set[ColorMultiset] = set()
        for m in members:
            if m.cardinality() > k:
                raise DomainError(f"multiset {m!r} exceeds cardinality bound {k}")
            if m not in closed:
                closed.update(m.submultisets())
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "members", frozenset(closed))

    def __setattr__(self, *a):
        raise AttributeError("AbstractionSet is immutable")

    def __contains__(self, m: ColorMultiset) -> bool:
        return m in self.members

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def __eq__(self, other):
        return (
            isinstance(other, AbstractionSet)
            and self.k == other.k
            and self.members == other.members
        )

    def __hash__(self):
        return hash((self.k, self.members))

    def __repr__(self):
        return f"AbstractionSet(k={self.k}, {len(self.members)} multisets)"

    def union(self, other: "AbstractionSet") -> "AbstractionSet":
        if self.k != other.k:
            raise DomainError("abstraction sets with different k")
        return AbstractionSet(self.k, self.members | other.members)

    def to_json(self):
        return [m.to_json() for m in sorted(self.members)]


def multiset_abstraction(s: Structure) -> ColorMultiset:
    """The multiset of element colors of ``s``."""
    return ColorMultiset(color_of(s, u) for u in s.universe())


def k_abstraction(s: Structure, k: int) -> AbstractionSet:
    """All sub-multisets of the color multiset of ``s`` with cardinality
    at most ``k`` (always includes the empty multiset)."""
    if k < 1:
        raise DomainError("k must be >= 1")
    return AbstractionSet(k, multiset_abstraction(s).submultisets(max_card=k))


def single_pair_fusion(m1: ColorMultiset, m2: ColorMultiset) -> frozenset:
    """Abstract counterpart of a 1-generated fusion: replace one disjoint
    pair of colors by its union, keep the rest."""
    out = set()
    for c1 in m1.counts:
        for c2 in m2.counts:
            if c1 & c2:
                continue
            merged = ColorMultiset([c1 | c2]).union(m1.remove_one(c1)).union(m2.remove_one(c2))
            out.add(merged)
    return frozenset(out)


def k_single_pair_fusion(m1: ColorMultiset, m2: ColorMultiset, k: int) -> frozenset:
    """Cardinality-capped single-pair fusion: every sub-multiset of
    cardinality <= k of every fusion result."""
    if m1.cardinality() > k or m2.cardinality() > k:
        raise DomainError(f"arguments must have cardinality <= {k}")
    out = set()
    for m in single_pair_fusion(m1, m2):
        out.update(m.submultisets(max_card=k))
    return frozenset(out)


def closure_fixpoint(seed: AbstractionSet) -> AbstractionSet:
    """Least set containing ``seed`` and closed under the capped
    single-pair fusion; terminates because the k-multiset domain over the
    finite color set is finite."""
    k = seed.k
    members = set(seed.members)
    frontier = set(members)
    while frontier:
        new: set[ColorMultiset] = set()
        pairs = itertools.chain(
            itertools.product(frontier, members),
            itertools.product(members - frontier, frontier),
        )
        for m1, m2 in pairs:
            for m in k_single_pair_fusion(m1, m2, k):
                if m not in members:
                    new.add(m)
        members |= new
        frontier = new
    return AbstractionSet(k, members)


# -- language abstraction by state fixpoint -----------------------------------


@dataclass(frozen=True)
class _VisBlock:
    consts: frozenset
    color: frozenset


def _canon_vis(blocks: Iterable[_VisBlock]) -> tuple[_VisBlock, ...]:
    return tuple(sorted(blocks, key=lambda b: sorted(b.consts)))


def language_abstraction(a: TreeAutomaton, k: int) -> AbstractionSet:
    """The k-multiset color abstraction of the automaton's evaluated
    language, computed as a least fixpoint over states.

    Each state carries pairs (visible classes with exact colors, hidden
    multiset of cardinality <= k); hidden parts are stored downward
    closed, so collecting at the final states yields exactly the
    abstraction of the language.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    alphabet = frozenset(a.sig.colors)
    atoms, unary, binary = a.rules_by_op_kind()

    values: dict = {}
    queue: list[tuple] = []

    def emit(q, vis: tuple, hidden: ColorMultiset):
        key = (q, vis, hidden)
        if key not in values:
            values[key] = True
            queue.append(key)

    empty = ColorMultiset()
    for r in atoms:
        op: AtomSym = r.op
        distinct: list[frozenset] = []
        for c in op.arg_sets:
            if c not in distinct:
                distinct.append(c)
        blocks = []
        for c in distinct:
            col = frozenset({op.rel}) if op.rel in alphabet else frozenset()
            blocks.append(_VisBlock(c, col))
        emit(r.rhs, _canon_vis(blocks), empty)

    by_state: dict = {}
    out: set[ColorMultiset] = set()
    processed: set = set()
    while queue:
        key = queue.pop()
        if key in processed:
            continue
        processed.add(key)
        q, vis, hidden = key
        by_state.setdefault(q, []).append((vis, hidden))
        if q in a.finals:
            visible = ColorMultiset(b.color for b in vis)
            for vsub in visible.submultisets():
                m = vsub.union(hidden)
                if m.cardinality() <= k:
                    out.add(m)
        for r in unary:
            if r.lhs[0] != q:
                continue
            if isinstance(r.op, ForgetSym):
                blocks = []
                dropped = []
                for b in vis:
                    rest = b.consts - r.op.drop
                    if rest:
                        blocks.append(_VisBlock(rest, b.color))
                    else:
                        dropped.append(b.color)
                d = ColorMultiset(dropped)
                for dsub in d.submultisets():
                    m = hidden.union(dsub)
                    if m.cardinality() <= k:
                        emit(r.rhs, _canon_vis(blocks), m)
            else:
                alpha = r.op.map()
                images = [frozenset(alpha[x] for x in b.consts) for b in vis]
                if any(
                    images[i] & images[j]
                    for i in range(len(images))
                    for j in range(i + 1, len(images))
                ):
                    continue
                blocks = [_VisBlock(img, b.color) for img, b in zip(images, vis)]
                emit(r.rhs, _canon_vis(blocks), hidden)
        for r in binary:
            for side, other_state in ((0, r.lhs[1]), (1, r.lhs[0])):
                if r.lhs[side] != q:
                    continue
                for vis2, hidden2 in list(by_state.get(other_state, ())):
                    pair = ((vis, hidden), (vis2, hidden2))
                    if side == 1:
                        pair = (pair[1], pair[0])
                    merged = _merge_vis(pair[0][0], pair[1][0])
                    if merged is None:
                        continue
                    m = pair[0][1].union(pair[1][1])
                    if m.cardinality() <= k:
                        emit(r.rhs, merged, m)
    return AbstractionSet(k, out)


def _merge_vis(vis1: tuple, vis2: tuple):
    blocks = list(vis1) + list(vis2)
    parent = list(range(len(blocks)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[str, int] = {}
    for i, b in enumerate(blocks):
        for name in b.consts:
            if name in owner:
                parent[find(i)] = find(owner[name])
            else:
                owner[name] = i
    groups: dict[int, list[_VisBlock]] = {}
    for i, b in enumerate(blocks):
        groups.setdefault(find(i), []).append(b)
    merged = []
    for group in groups.values():
        consts = frozenset().union(*(b.consts for b in group))
        color = frozenset().union(*(b.color for b in group))
        merged.append(_VisBlock(consts, color))
    return _canon_vis(merged)


# -- RGB schemes and the decision ---------------------------------------------


class RGBScheme:
    """Partition of the color set into red, green and blue: blue colors
    pairwise intersect, every green meets every blue, and every red
    misses some blue.  Fully determined by the blue set."""

    __slots__ = ("colors", "red", "green", "blue")

    def __init__(self, colors: Iterable[str], red, green, blue):
        alphabet = frozenset(colors)
        red = frozenset(frozenset(c) for c in red)
        green = frozenset(frozenset(c) for c in green)
        blue = frozenset(frozenset(c) for c in blue)
        gamma = set(all_colors(alphabet))
        if red | green | blue != gamma or (red & green) or (red & blue) or (green & blue):
            raise DomainError("red/green/blue must partition the color set")
        for g1 in blue:
            for g2 in blue:
                if not g1 & g2:
                    raise DomainError(
                        f"blue colors must pairwise intersect: {color_name(g1)}, {color_name(g2)}"
                    )
        for g1 in green:
            for g2 in blue:
                if not g1 & g2:
                    raise DomainError(
                        f"green color {color_name(g1)} misses blue {color_name(g2)}"
                    )
        for g1 in red:
            if not any(not (g1 & g2) for g2 in blue):
                raise DomainError(f"red color {color_name(g1)} meets every blue color")
        object.__setattr__(self, "colors", alphabet)
        object.__setattr__(self, "red", red)
        object.__setattr__(self, "green", green)
        object.__setattr__(self, "blue", blue)

    def __setattr__(self, *a):
        raise AttributeError("RGBScheme is immutable")

    @classmethod
    def from_blue(cls, colors: Iterable[str], blue: Iterable[Color]) -> "RGBScheme":
        """The unique scheme with the given blue set: a non-blue color is
        red iff it misses some blue color, otherwise green."""
        alphabet = frozenset(colors)
        blue = frozenset(frozenset(c) for c in blue)
        gamma = all_colors(alphabet)
        red, green = set(), set()
        for g in gamma:
            if g in blue:
                continue
            if any(not (g & b) for b in blue):
                red.add(g)
            else:
                green.add(g)
        return cls(alphabet, red, green, blue)

    def kind(self, color: Color) -> str:
        c = frozenset(color)
        if c in self.red:
            return "red"
        if c in self.green:
            return "green"
        if c in self.blue:
            return "blue"
        raise DomainError(f"color {color_name(c)} outside the scheme's universe")

    def __eq__(self, other):
        return (
            isinstance(other, RGBScheme)
            and (self.colors, self.red, self.green, self.blue)
            == (other.colors, other.red, other.green, other.blue)
        )

    def __hash__(self):
        return hash((self.colors, self.red, self.green, self.blue))

    def __repr__(self):
        def names(cs):
            return "{" + ", ".join(color_name(c) for c in sorted(cs, key=color_key)) + "}"

        return f"RGBScheme(red={names(self.red)}, green={names(self.green)}, blue={names(self.blue)})"

    def to_json(self):
        def enc(cs):
            return sorted((sorted(c) for c in cs), key=lambda x: (len(x), x))

        return {"red": enc(self.red), "green": enc(self.green), "blue": enc(self.blue)}


def structure_type(s: Structure, scheme: RGBScheme) -> str:
    """'R' = exactly one red element and the rest blue, 'G' = at least one
    green and the rest blue, 'B' = all blue, 'OTHER' otherwise."""
    reds = greens = blues = 0
    for u in s.universe():
        kind = scheme.kind(color_of(s, u))
        if kind == "red":
            reds += 1
        elif kind == "green":
            greens += 1
        else:
            blues += 1
    if reds == 0 and greens == 0:
        return "B"
    if reds == 1 and greens == 0:
        return "R"
    if reds == 0 and greens >= 1:
        return "G"
    return "OTHER"


@dataclass(frozen=True)
class Verdict:
    bounded: bool
    scheme: RGBScheme | None = None
    witness: tuple[Color, Color] | None = None
    abstraction: AbstractionSet | None = None

    def to_json(self) -> dict:
        out: dict = {"bounded": self.bounded}
        if self.bounded:
            out["scheme"] = self.scheme.to_json()
        else:
            out["witness"] = [sorted(self.witness[0]), sorted(self.witness[1])]
        return out


def decide_bounded(a: TreeAutomaton, k: int = 3) -> Verdict:
    """Decide whether the fusion closure of the automaton's language has
    bounded tree-width.

    Requires a language of connected, sort-empty structures.  UNBOUNDED
    iff two disjoint colors each occur three times in some closure
    abstraction; otherwise BOUNDED together with the scheme whose blue
    set is the tripling colors.
    """
    if k < 3:
        raise DomainError("the decision needs k >= 3")
    for q in a.finals:
        sort = a.state_sort(q)
        if sort:
            raise SortError(f"final state {q!r} accepts sort {sorted(sort)}, expected {{}}")
    connected, counterexample = verify_all_connected(a)
    if not connected:
        raise PreconditionError(
            "the language contains a disconnected structure", counterexample
        )
    closed = closure_fixpoint(language_abstraction(a, k))
    tripling = sorted(
        (g for g in a.sig.gamma() if triple(g) in closed),
        key=lambda c: (len(c), color_key(c)),
    )
    for g1, g2 in itertools.combinations_with_replacement(tripling, 2):
        if not (g1 & g2):
            return Verdict(False, witness=(g1, g2), abstraction=closed)
    scheme = RGBScheme.from_blue(a.sig.colors, tripling)
    return Verdict(True, scheme=scheme, abstraction=closed)


@dataclass(frozen=True)
class ConformanceReport:
    ok: bool
    diagnostics: tuple[str, ...]

    def __bool__(self):
        return self.ok


def check_conformance(a: TreeAutomaton, scheme: RGBScheme) -> ConformanceReport:
    """Check the two conformance conditions against the scheme: no
    accepted structure pairs a red element with a non-blue one, and no
    closure abstraction repeats a green color three times."""
    diags: list[str] = []
    base = language_abstraction(a, 3)
    for m in base.members:
        if m.cardinality() != 2:
            continue
        cols = []
        for c in m.counts:
            cols += [c] * m.counts[c]
        kinds = sorted(scheme.kind(c) for c in cols)
        if kinds == ["red", "red"]:
            diags.append(f"two red elements coexist: {m!r}")
        elif kinds == ["green", "red"]:
            diags.append(f"a red element coexists with a green one: {m!r}")
    closed = closure_fixpoint(base)
    for g in sorted(scheme.green, key=color_key):
        if triple(g) in closed:
            diags.append(f"green color {color_name(g)} occurs three times in the closure")
    return ConformanceReport(not diags, tuple(diags))
