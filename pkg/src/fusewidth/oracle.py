"""Brute-force ground truth for differential testing: bounded language and
closure enumeration, iso-set comparison, brute abstractions, and the
counting-sentence checker.

Everything here is deliberately naive; the abstract pipeline is validated
against these enumerations at desk scale.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

from .abstraction import AbstractionSet, ColorMultiset, k_abstraction
from .algebra import eval_term
from .automata import TreeAutomaton, enumerate_terms
from .closure import ClosureAutomaton
from .core import Structure, canonical_form, color_of, fuse_all
from .errors import DomainError


def worker_count() -> int:
    """Worker cap from FUSEWIDTH_THREADS (default: sequential)."""
    raw = os.environ.get("FUSEWIDTH_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


class IsoSet:
    """A set of structures up to isomorphism: members are stored in
    canonical form."""

    __slots__ = ("members",)

    def __init__(self, structures: Iterable[Structure] = ()):
        object.__setattr__(
            self, "members", frozenset(canonical_form(s) for s in structures)
        )

    def __setattr__(self, *a):
        raise AttributeError("IsoSet is immutable")

    def __contains__(self, s: Structure) -> bool:
        return canonical_form(s) in self.members

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members, key=lambda s: (s.size, s._key[2], s._key[3])))

    def __eq__(self, other):
        return isinstance(other, IsoSet) and self.members == other.members

    def __hash__(self):
        return hash(self.members)

    def __or__(self, other: "IsoSet") -> "IsoSet":
        out = IsoSet()
        object.__setattr__(out, "members", self.members | other.members)
        return out

    def __sub__(self, other: "IsoSet") -> "IsoSet":
        out = IsoSet()
        object.__setattr__(out, "members", self.members - other.members)
        return out

    def __le__(self, other: "IsoSet") -> bool:
        return self.members <= other.members

    def restrict_size(self, max_size: int) -> "IsoSet":
        out = IsoSet()
        object.__setattr__(
            out, "members", frozenset(s for s in self.members if s.size <= max_size)
        )
        return out


def enumerate_language(a: TreeAutomaton, depth: int) -> IsoSet:
    """Canonicalized values of all accepted terms of height <= depth."""
    return IsoSet(eval_term(t, a.sig) for t in enumerate_terms(a, depth))


@dataclass(frozen=True)
class ClosureEnumeration:
    structures: IsoSet
    saturated: bool
    rounds: int
    pruned: bool

    def __iter__(self):
        return iter(self.structures)

    def __contains__(self, s):
        return s in self.structures

    def __len__(self):
        return len(self.structures)


def enumerate_fusion_closure(
    seed: Iterable[Structure],
    steps: int,
    max_size: int,
    max_pairs: int | None = None,
) -> ClosureEnumeration:
    """Iterate pairwise fusion for at most ``steps`` rounds, pruning
    results larger than ``max_size`` and deduplicating up to isomorphism.

    ``saturated`` reports that a fixpoint was reached within the bounds
    and nothing was ever pruned, i.e. the result is the whole closure
    restricted to ``max_size``.
    """
    members: set[Structure] = set(IsoSet(seed).members)
    for s in members:
        if s.sort:
            raise DomainError("closure seeds must have sort {}")
    pruned = False
    frontier = set(members)
    rounds = 0
    workers = worker_count()
    while frontier and rounds < steps:
        rounds += 1
        pairs = [
            (s1, s2)
            for s1, s2 in itertools.product(sorted(members, key=repr), repeat=2)
            if s1 in frontier or s2 in frontier
        ]

        def fuse_pair(pair):
            return fuse_all(pair[0], pair[1], max_pairs=max_pairs)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = list(pool.map(fuse_pair, pairs))
        else:
            batches = [fuse_pair(p) for p in pairs]
        new: set[Structure] = set()
        for batch in batches:
            for s in batch:
                if s.size > max_size:
                    pruned = True
                elif s not in members:
                    new.add(s)
        members |= new
        frontier = new
    saturated = not frontier and not pruned
    out = IsoSet()
    object.__setattr__(out, "members", frozenset(members))
    return ClosureEnumeration(out, saturated, rounds, pruned)


def brute_abstraction(structures: Iterable[Structure], k: int) -> AbstractionSet:
    """Union of the k-abstractions of all the structures."""
    out = AbstractionSet(k)
    members: set[ColorMultiset] = set()
    for s in structures:
        members |= k_abstraction(s, k).members
    return AbstractionSet(k, members)


@dataclass(frozen=True)
class CountingSentence:
    """Conjunction of per-color count constraints derived from a multiset
    ``M`` at cap ``k``: for each color of ``M``, the structure must hold
    at least that many elements of exactly that color.

    Satisfaction coincides with membership of ``M`` in the k-abstraction:
    a sub-multiset constrains counts from below and says nothing about
    colors it misses.
    """

    thresholds: tuple[tuple[frozenset, int], ...]
    k: int

    @classmethod
    def of(cls, m: ColorMultiset, k: int) -> "CountingSentence":
        if k < 1:
            raise DomainError("k must be >= 1")
        items = []
        for c in m.colors():
            n = m.count(c)
            if not 1 <= n <= k:
                raise DomainError("counting sentences need per-color counts in [1, k]")
            items.append((frozenset(c), n))
        return cls(tuple(items), k)

    def cardinality(self) -> int:
        return sum(n for _, n in self.thresholds)


def holds_counting_sentence(s: Structure, sentence: CountingSentence) -> bool:
    """Evaluate the sentence on a concrete structure."""
    if sentence.cardinality() > sentence.k:
        return False
    for color, need in sentence.thresholds:
        have = sum(1 for u in s.universe() if color_of(s, u) == color)
        if have < need:
            return False
    return True


@dataclass(frozen=True)
class DiffReport:
    saturated: bool
    only_in_closure: tuple[Structure, ...]
    only_in_automaton: tuple[Structure, ...]
    size_bound: int

    @property
    def equal(self) -> bool:
        return not self.only_in_closure and not self.only_in_automaton

    def to_json(self) -> dict:
        return {
            "saturated": self.saturated,
            "onlyInClosure": [s.to_json() for s in self.only_in_closure],
            "onlyInAutomaton": [s.to_json() for s in self.only_in_automaton],
            "sizeBound": self.size_bound,
        }


def diff_closure_vs_automaton(
    a: TreeAutomaton,
    a_star: ClosureAutomaton | TreeAutomaton,
    depth: int,
    steps: int,
    max_size: int,
    star_depth: int | None = None,
) -> DiffReport:
    """Compare the brute-force fusion closure of the language (bounded
    enumeration) against the closure automaton's evaluated language,
    both restricted to structures of at most ``max_size`` elements.

    ``star_depth`` defaults to ``depth + 3 * (steps + 1)``: each simulated
    fusion adds at most three term levels, plus the final forget.
    """
    star = a_star.automaton if isinstance(a_star, ClosureAutomaton) else a_star
    closure = enumerate_fusion_closure(
        enumerate_language(a, depth), steps, max_size
    )
    if star_depth is None:
        star_depth = depth + 3 * (steps + 1)
    star_side = enumerate_language(star, star_depth).restrict_size(max_size)
    closure_side = closure.structures.restrict_size(max_size)
    return DiffReport(
        closure.saturated,
        tuple(closure_side - star_side),
        tuple(star_side - closure_side),
        max_size,
    )
