"""Relational structures over a finite signature and their color-constrained
fusion.

A structure interprets every relation symbol as a set of tuples and every
constant of its sort as an element.  Elements are small integers ``0..n-1``
local to the structure; all operations renumber their results, so element
identity never leaks across operations.  Values are immutable and safe to
share between workers.
"""

from __future__ import annotations

import itertools
import json
from typing import Iterable, Mapping

from .errors import DomainError

Color = frozenset  # frozenset[str]: subset of the signature's color alphabet


def color_key(color: Iterable[str]) -> tuple[str, ...]:
    """Deterministic sort key for a color."""
    return tuple(sorted(color))


def color_name(color: Iterable[str]) -> str:
    return "{" + ",".join(sorted(color)) + "}"


def all_colors(alphabet: Iterable[str]) -> tuple[Color, ...]:
    """Every subset of the color alphabet, smallest first."""
    names = sorted(set(alphabet))
    out = []
    for k in range(len(names) + 1):
        for combo in itertools.combinations(names, k):
            out.append(frozenset(combo))
    return tuple(sorted(out, key=lambda c: (len(c), color_key(c))))


class Signature:
    """Finite relational alphabet with a designated color sub-alphabet.

    ``relations`` maps symbol names to arities (every arity >= 1),
    ``colors`` is the subset of unary relation names whose membership
    defines element colors, ``constants`` is the ordered enumeration of
    base constant names.
    """

    __slots__ = ("relations", "colors", "constants", "_key")

    def __init__(
        self,
        relations: Mapping[str, int] | Iterable[tuple[str, int]],
        colors: Iterable[str] = (),
        constants: Iterable[str] = (),
    ):
        rel = dict(relations)
        cols = frozenset(colors)
        consts = tuple(constants)
        for name, ar in rel.items():
            if ar < 1:
                raise DomainError(f"relation {name!r} has arity {ar} < 1")
        for c in cols:
            if rel.get(c) != 1:
                raise DomainError(f"color relation {c!r} must be a declared unary relation")
        if set(consts) & set(rel):
            clash = sorted(set(consts) & set(rel))
            raise DomainError(f"constant names clash with relation names: {clash}")
        if len(consts) != len(set(consts)):
            raise DomainError("duplicate constant names")
        object.__setattr__(self, "relations", dict(sorted(rel.items())))
        object.__setattr__(self, "colors", cols)
        object.__setattr__(self, "constants", consts)
        object.__setattr__(self, "_key", (tuple(sorted(rel.items())), cols, consts))

    def __setattr__(self, *a):
        raise AttributeError("Signature is immutable")

    def arity(self, name: str) -> int:
        try:
            return self.relations[name]
        except KeyError:
            raise DomainError(f"unknown relation {name!r}") from None

    def gamma(self) -> tuple[Color, ...]:
        """All colors (subsets of the color alphabet), smallest first."""
        return all_colors(self.colors)

    def __eq__(self, other):
        return isinstance(other, Signature) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"Signature({self.relations}, colors={sorted(self.colors)}, constants={list(self.constants)})"

    def to_json(self) -> dict:
        return {
            "relations": dict(self.relations),
            "colors": sorted(self.colors),
            "constants": list(self.constants),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Signature":
        return cls(data["relations"], data.get("colors", ()), data.get("constants", ()))


class Structure:
    """A finite structure: universe ``0..size-1``, relation interpretation,
    and a total constant interpretation on its sort."""

    __slots__ = ("sig", "size", "sort", "rel", "const", "_key", "_hash")

    def __init__(
        self,
        sig: Signature,
        size: int,
        rel: Mapping[str, Iterable[tuple[int, ...]]] | None = None,
        const: Mapping[str, int] | None = None,
    ):
        rel = rel or {}
        const = const or {}
        if size < 0:
            raise DomainError("negative universe size")
        interp: dict[str, frozenset] = {}
        for name, tuples in rel.items():
            ar = sig.arity(name)
            ts = frozenset(tuple(t) for t in tuples)
            for t in ts:
                if len(t) != ar:
                    raise DomainError(f"tuple {t} has wrong arity for {name!r}")
                if any(not (0 <= x < size) for x in t):
                    raise DomainError(f"tuple {t} of {name!r} mentions element outside universe")
            if ts:
                interp[name] = ts
        cmap = dict(const)
        for c, e in cmap.items():
            if c not in sig.constants:
                raise DomainError(f"unknown constant {c!r}")
            if not (0 <= e < size):
                raise DomainError(f"constant {c!r} interpreted outside universe")
        object.__setattr__(self, "sig", sig)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "sort", frozenset(cmap))
        object.__setattr__(self, "rel", {k: interp[k] for k in sorted(interp)})
        object.__setattr__(self, "const", {k: cmap[k] for k in sorted(cmap)})
        key = (
            sig,
            size,
            tuple((k, tuple(sorted(v))) for k, v in self.rel.items()),
            tuple(self.const.items()),
        )
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __setattr__(self, *a):
        raise AttributeError("Structure is immutable")

    def __eq__(self, other):
        return isinstance(other, Structure) and self._key == other._key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        rels = ", ".join(f"{r}:{sorted(ts)}" for r, ts in self.rel.items())
        return f"Structure(n={self.size}, sort={sorted(self.sort)}, const={self.const}, {rels})"

    def universe(self) -> range:
        return range(self.size)

    def tuples(self, name: str) -> frozenset:
        return self.rel.get(name, frozenset())

    def to_json(self) -> dict:
        return {
            "sort": sorted(self.sort),
            "universe": self.size,
            "rel": {r: sorted(list(t) for t in ts) for r, ts in self.rel.items()},
            "const": dict(self.const),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, sig: Signature, data: dict) -> "Structure":
        rel = {r: [tuple(t) for t in ts] for r, ts in data.get("rel", {}).items()}
        return cls(sig, data["universe"], rel, data.get("const", {}))


def color_of(s: Structure, u: int) -> Color:
    """Color of element ``u``: the color relations whose interpretation
    contains ``(u,)``."""
    if not (0 <= u < s.size):
        raise DomainError(f"element {u} not in universe of size {s.size}")
    return frozenset(r for r in s.sig.colors if (u,) in s.tuples(r))


def color_profile(s: Structure) -> tuple[Color, ...]:
    """Colors of all elements, in element order."""
    return tuple(color_of(s, u) for u in s.universe())


def check_partition(blocks: Iterable[Iterable[int]], size: int) -> list[frozenset]:
    bs = [frozenset(b) for b in blocks]
    seen: set[int] = set()
    for b in bs:
        if not b:
            raise DomainError("empty partition block")
        if b & seen:
            raise DomainError("overlapping partition blocks")
        seen |= b
    if seen != set(range(size)):
        raise DomainError("partition does not cover the universe")
    return bs


def quotient(s: Structure, blocks: Iterable[Iterable[int]]) -> Structure:
    """Quotient of ``s`` by the partition ``blocks``: blocks become
    elements, tuples and constants are mapped block-wise."""
    return _quotient_map(s, blocks)[0]


def _quotient_map(s: Structure, blocks: Iterable[Iterable[int]]) -> tuple[Structure, dict[int, int]]:
    bs = check_partition(blocks, s.size)
    bs.sort(key=min)
    mapping = {u: i for i, b in enumerate(bs) for u in b}
    rel = {
        r: [tuple(mapping[x] for x in t) for t in ts]
        for r, ts in s.rel.items()
    }
    const = {c: mapping[e] for c, e in s.const.items()}
    return Structure(s.sig, len(bs), rel, const), mapping


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb

    def blocks(self):
        out: dict = {}
        for x in self.parent:
            out.setdefault(self.find(x), set()).add(x)
        return list(out.values())


def compose(s1: Structure, s2: Structure) -> Structure:
    """Aggregative composition: disjoint copies glued at the elements
    interpreting shared constants.  For disjoint sorts this is the
    disjoint union."""
    return _compose_map(s1, s2)[0]


def _compose_map(s1: Structure, s2: Structure) -> tuple[Structure, dict[int, int], dict[int, int]]:
    if s1.sig != s2.sig:
        raise DomainError("compose requires structures over the same signature")
    n1 = s1.size
    union = Structure(
        s1.sig,
        n1 + s2.size,
        {
            r: [tuple(t) for t in s1.tuples(r)] + [tuple(x + n1 for x in t) for t in s2.tuples(r)]
            for r in set(s1.rel) | set(s2.rel)
        },
        {},
    )
    uf = _UnionFind(range(union.size))
    for c in s1.sort & s2.sort:
        uf.union(s1.const[c], s2.const[c] + n1)
    merged, mapping = _quotient_map(union, uf.blocks())
    const = {c: mapping[s1.const[c]] for c in s1.sort}
    const.update({c: mapping[s2.const[c] + n1] for c in s2.sort})
    result = Structure(merged.sig, merged.size, merged.rel, const)
    left = {u: mapping[u] for u in range(n1)}
    right = {u: mapping[u + n1] for u in range(s2.size)}
    return result, left, right


def is_compatible(pairs: Iterable[tuple[int, int]], s: Structure) -> bool:
    """True iff every pair joins elements of disjoint colors in ``s``."""
    return all(not (color_of(s, a) & color_of(s, b)) for a, b in pairs)


def check_matching(pairs: Iterable[tuple[int, int]], s1: Structure, s2: Structure) -> frozenset:
    """Validate a cross-universe matching: pairwise distinct endpoints on
    both sides."""
    ps = frozenset((int(a), int(b)) for a, b in pairs)
    lefts = [a for a, _ in ps]
    rights = [b for _, b in ps]
    if len(set(lefts)) != len(lefts) or len(set(rights)) != len(rights):
        raise DomainError("matching pairs share an endpoint")
    for a, b in ps:
        if not (0 <= a < s1.size) or not (0 <= b < s2.size):
            raise DomainError(f"matching pair ({a},{b}) outside the universes")
    return ps


def fuse_with(s1: Structure, s2: Structure, pairs: Iterable[tuple[int, int]]) -> Structure:
    """Fusion of two sort-empty structures along one compatible matching:
    the quotient of their disjoint union by the matching's equivalence
    closure."""
    if s1.sort or s2.sort:
        raise DomainError("fusion is only defined for structures of sort {}")
    ps = check_matching(pairs, s1, s2)
    if not ps:
        raise DomainError("fusion requires a nonempty matching")
    union, left, right = _compose_map(s1, s2)
    shifted = [(left[a], right[b]) for a, b in ps]
    if not is_compatible(shifted, union):
        raise DomainError("matching is not compatible: paired colors intersect")
    uf = _UnionFind(range(union.size))
    for a, b in shifted:
        uf.union(a, b)
    return quotient(union, uf.blocks())


def fuse_all(s1: Structure, s2: Structure, max_pairs: int | None = None) -> frozenset:
    """All fusions of two sort-empty structures, one per nonempty
    compatible matching, deduplicated up to isomorphism."""
    if s1.sort or s2.sort:
        raise DomainError("fusion is only defined for structures of sort {}")
    cols1 = color_profile(s1)
    cols2 = color_profile(s2)
    compat = {
        (a, b)
        for a in s1.universe()
        for b in s2.universe()
        if not (cols1[a] & cols2[b])
    }
    limit = min(s1.size, s2.size)
    if max_pairs is not None:
        limit = min(limit, max_pairs)
    out = set()
    for k in range(1, limit + 1):
        for lefts in itertools.combinations(range(s1.size), k):
            for rights in itertools.permutations(range(s2.size), k):
                pairs = tuple(zip(lefts, rights))
                if all(p in compat for p in pairs):
                    out.add(canonical_form(fuse_with(s1, s2, pairs)))
    return frozenset(out)


# -- canonical forms ---------------------------------------------------------
#
# Canonical labeling by iterative refinement plus individualization.  The
# initial invariant is (constants held, per-position tuple degrees); the
# refinement signature of an element is the multiset of (relation, position,
# argument classes) over all tuples containing it.  When the stable partition
# is not discrete we branch over the first non-singleton cell and keep the
# lexicographically least full encoding, which is isomorphism-invariant.


def _refine(s: Structure, classes: list[int]) -> list[int]:
    occurrences: list[list] = [[] for _ in range(s.size)]
    for r in sorted(s.rel):
        for t in s.rel[r]:
            for i, x in enumerate(t):
                occurrences[x].append((r, i, t))
    while True:
        sigs = []
        for u in range(s.size):
            nb = sorted((r, i, tuple(classes[y] for y in t)) for r, i, t in occurrences[u])
            sigs.append((classes[u], tuple(nb)))
        order = {sig: rank for rank, sig in enumerate(sorted(set(sigs)))}
        new = [order[sig] for sig in sigs]
        if new == classes:
            return classes
        classes = new


def _initial_classes(s: Structure) -> list[int]:
    labels = []
    for u in range(s.size):
        consts = tuple(sorted(c for c, e in s.const.items() if e == u))
        prof = []
        for r in sorted(s.sig.relations):
            ts = s.tuples(r)
            for i in range(s.sig.relations[r]):
                prof.append(sum(1 for t in ts if t[i] == u))
        labels.append((consts, tuple(prof)))
    order = {lab: rank for rank, lab in enumerate(sorted(set(labels)))}
    return [order[lab] for lab in labels]


def _encode(s: Structure, perm: dict[int, int]):
    rel = tuple(
        (r, tuple(sorted(tuple(perm[x] for x in t) for t in s.rel[r])))
        for r in sorted(s.rel)
    )
    const = tuple(sorted((c, perm[e]) for c, e in s.const.items()))
    return (s.size, tuple(sorted(s.sort)), const, rel)


def canonical_with_perm(s: Structure) -> tuple[Structure, dict[int, int]]:
    """Canonical form together with the relabeling used to reach it."""
    if s.size == 0:
        return s, {}
    best: list = [None, None]

    def search(classes: list[int]):
        classes = _refine(s, classes)
        cells: dict[int, list[int]] = {}
        for u, c in enumerate(classes):
            cells.setdefault(c, []).append(u)
        target = None
        for c in sorted(cells):
            if len(cells[c]) > 1:
                target = c
                break
        if target is None:
            perm = {u: classes[u] for u in range(s.size)}
            cert = _encode(s, perm)
            if best[0] is None or cert < best[0]:
                best[0] = cert
                best[1] = perm
            return
        for u in sorted(cells[target]):
            branched = [
                (c + 1 if c > target or (c == target and v != u) else c)
                for v, c in enumerate(classes)
            ]
            search(branched)

    search(_initial_classes(s))
    size, _sort, const, rel = best[0]
    return Structure(s.sig, size, {r: ts for r, ts in rel}, dict(const)), best[1]


def canonical_form(s: Structure) -> Structure:
    """Deterministic canonical relabeling: two structures have equal
    canonical forms iff they are isomorphic (preserving constants)."""
    return canonical_with_perm(s)[0]


def brute_force_isomorphic(s1: Structure, s2: Structure) -> bool:
    """Isomorphism oracle by exhaustive permutation search (test sizes)."""
    if s1.sig != s2.sig or s1.size != s2.size or s1.sort != s2.sort:
        return False
    names = set(s1.rel) | set(s2.rel)
    for perm in itertools.permutations(range(s1.size)):
        if any(perm[s1.const[c]] != s2.const[c] for c in s1.sort):
            continue
        if all(
            frozenset(tuple(perm[x] for x in t) for t in s1.tuples(r)) == s2.tuples(r)
            for r in names
        ):
            return True
    return False
