"""Command-line surface: evaluate terms, decide boundedness of the fusion
closure, construct the closure automaton, and build grid witnesses.

Exit codes: 0 success / BOUNDED, 10 UNBOUNDED, 11 abstraction-level
witness only, 2 precondition or input failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from .abstraction import decide_bounded, multiset_abstraction, triple
from .algebra import eval_term, parse_term, sort_check, term_width_bound
from .automata import annotate, load_automaton
from .closure import GridParams, build_closure_automaton, build_grid_witness_with_groups
from .core import Signature, color_name
from .errors import FusewidthError, PreconditionError, SortError
from .graphs import contract_groups, exact_treewidth, gaifman, structure_to_dot
from .oracle import diff_closure_vs_automaton, enumerate_fusion_closure, enumerate_language

EXIT_OK = 0
EXIT_FAILURE = 2
EXIT_UNBOUNDED = 10
EXIT_ABSTRACT_WITNESS = 11


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    print(f"wrote {path}")


def _dump(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _formats(args) -> set[str]:
    return {f.strip() for f in args.format.split(",") if f.strip()}


def cmd_eval(args) -> int:
    sig = Signature.from_json(json.loads(Path(args.signature).read_text()))
    term = parse_term(Path(args.term).read_text())
    check = sort_check(term)
    if not check.ok:
        print(f"sort error at position {check.position}: {check.message}", file=sys.stderr)
        return EXIT_FAILURE
    value = eval_term(term, sig)
    from .graphs import is_connected

    out = Path(args.out)
    stem = Path(args.term).stem
    fmts = _formats(args)
    if "json" in fmts:
        _write(out / f"{stem}.value.json", _dump(value.to_json()))
    if "dot" in fmts:
        _write(out / f"{stem}.gaifman.dot", structure_to_dot(value, stem))
    print(
        f"sort={sorted(check.sort)} elements={value.size} "
        f"widthBound={term_width_bound(term)} connected={is_connected(value)}"
    )
    return EXIT_OK


def _load(path: str):
    return load_automaton(Path(path).read_text())


def cmd_decide(args) -> int:
    automaton = _load(args.automaton)
    try:
        verdict = decide_bounded(automaton, k=args.k)
    except PreconditionError as e:
        print(f"precondition failed: {e}", file=sys.stderr)
        if e.counterexample is not None:
            from .algebra import format_term

            print(f"counterexample term: {format_term(e.counterexample)}", file=sys.stderr)
        return EXIT_FAILURE
    except SortError as e:
        print(f"sort error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    out = Path(args.out)
    stem = Path(args.automaton).stem
    _write(out / f"{stem}.verdict.json", _dump(verdict.to_json()))
    if verdict.bounded:
        print(f"BOUNDED {verdict.scheme!r}")
        return EXIT_OK
    g1, g2 = verdict.witness
    print(f"UNBOUNDED witness colors {color_name(g1)}, {color_name(g2)}")
    return EXIT_UNBOUNDED


def cmd_closure(args) -> int:
    automaton = _load(args.automaton)
    try:
        verdict = decide_bounded(automaton)
    except (PreconditionError, SortError) as e:
        print(f"precondition failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    if not verdict.bounded:
        g1, g2 = verdict.witness
        print(
            f"refusing: closure is UNBOUNDED (witness {color_name(g1)}, {color_name(g2)})",
            file=sys.stderr,
        )
        return EXIT_UNBOUNDED
    annotated = annotate(automaton, verdict.scheme)
    a_star = build_closure_automaton(
        annotated, verdict.scheme, red_index_budget=args.red_index_budget
    )
    artifact = a_star.to_json()
    if args.diff:
        report = diff_closure_vs_automaton(
            automaton, a_star, args.depth, args.steps, args.max_size
        )
        artifact["diff"] = report.to_json()
        print(f"diff: saturated={report.saturated} equal={report.equal}")
    out = Path(args.out)
    stem = Path(args.automaton).stem
    _write(out / f"{stem}.astar.json", _dump(artifact))
    print(
        f"closure automaton: {len(a_star.automaton.states)} states, "
        f"{len(a_star.automaton.rules)} rules, K={a_star.specials.K}"
    )
    return EXIT_OK


def cmd_witness(args) -> int:
    automaton = _load(args.automaton)
    try:
        verdict = decide_bounded(automaton)
    except (PreconditionError, SortError) as e:
        print(f"precondition failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    if verdict.bounded:
        print("the closure is BOUNDED; no grid witness exists", file=sys.stderr)
        return EXIT_FAILURE
    g1, g2 = verdict.witness
    print(f"witness colors {color_name(g1)}, {color_name(g2)}")
    closure = enumerate_fusion_closure(
        enumerate_language(automaton, args.depth), args.steps, args.max_size
    )

    def realizes(s, color):
        return triple(color).submultiset_of(multiset_abstraction(s))

    s1 = next((s for s in closure.structures if realizes(s, g1)), None)
    s2 = next((s for s in closure.structures if realizes(s, g2)), None)
    out = Path(args.out)
    stem = Path(args.automaton).stem
    if s1 is None or s2 is None:
        _write(
            out / f"{stem}.witness.json",
            _dump(
                {
                    "abstract": True,
                    "colors": [sorted(g1), sorted(g2)],
                    "note": "no concrete realizations found within the enumeration bounds",
                }
            ),
        )
        print("abstraction-level witness only", file=sys.stderr)
        return EXIT_ABSTRACT_WITNESS
    witness = build_grid_witness_with_groups(GridParams(args.n, g1, g2, s1, s2))
    artifact = {
        "n": args.n,
        "colors": [sorted(g1), sorted(g2)],
        "structure": witness.structure.to_json(),
    }
    if args.n <= 4:
        minor = contract_groups(gaifman(witness.structure), witness.groups)
        artifact["gridMinorTreeWidth"] = exact_treewidth(minor)
    _write(out / f"{stem}.grid.json", _dump(artifact))
    _write(out / f"{stem}.grid.dot", structure_to_dot(witness.structure, stem))
    tw = artifact.get("gridMinorTreeWidth")
    print(f"grid witness n={args.n} elements={witness.structure.size} minorTreeWidth={tw}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusewidth",
        description="HR-algebra toolkit: decide tree-width boundedness of "
        "color-constrained fusion closures and construct closure automata.",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a term file")
    p.add_argument("term")
    p.add_argument("--signature", required=True, help="signature JSON file")
    p.add_argument("--out", default=".")
    p.add_argument("--format", default="json,dot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decide", help="decide boundedness of the fusion closure")
    p.add_argument("automaton")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("closure", help="construct the closure automaton")
    p.add_argument("automaton")
    p.add_argument("--out", default=".")
    p.add_argument("--diff", action="store_true", help="embed a differential report")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--max-size", type=int, default=8)
    p.add_argument("--red-index-budget", default="2", choices=["2", "2xArity"])
    p.set_defaults(func=cmd_closure)

    p = sub.add_parser("witness", help="build a grid witness for an unbounded closure")
    p.add_argument("automaton")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--out", default=".")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--max-size", type=int, default=10)
    p.set_defaults(func=cmd_witness)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    random.seed(args.seed)
    try:
        return args.func(args)
    except FusewidthError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
