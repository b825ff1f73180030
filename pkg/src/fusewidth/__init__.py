"""fusewidth: relational structures, their HR algebra, and the decision
whether the closure of a context-free set under color-constrained fusion
has bounded tree-width (with a constructive closure automaton when it
does)."""

from .abstraction import (
    AbstractionSet,
    ColorMultiset,
    ConformanceReport,
    RGBScheme,
    Verdict,
    check_conformance,
    closure_fixpoint,
    decide_bounded,
    k_abstraction,
    k_single_pair_fusion,
    language_abstraction,
    multiset_abstraction,
    single_pair_fusion,
    structure_type,
    triple,
)
from .algebra import (
    AtomSym,
    ComposeSym,
    ConstantPool,
    ForgetSym,
    RenameSym,
    Term,
    atom,
    compose_terms,
    eval_term,
    forget_term,
    format_term,
    parse_term,
    rename_term,
    sort_check,
    sort_of,
    term_width_bound,
)
from .automata import (
    AnnotatedAutomaton,
    Rule,
    TreeAutomaton,
    accepts,
    annotate,
    automaton_from_json,
    automaton_to_json,
    enumerate_terms,
    is_empty,
    load_automaton,
    parse_grammar,
    run,
    verify_all_connected,
)
from .closure import (
    BaseDerivation,
    ClosureAutomaton,
    FusionStep,
    GridParams,
    SpecialConstants,
    append_op,
    build_closure_automaton,
    build_grid_witness,
    build_grid_witness_with_groups,
    join2_op,
    join_op,
    label_op,
    witness_term_for_derivation,
)
from .core import (
    Signature,
    Structure,
    canonical_form,
    color_of,
    compose,
    fuse_all,
    fuse_with,
    is_compatible,
    quotient,
)
from .errors import (
    DomainError,
    EvalError,
    FusewidthError,
    ParseError,
    PreconditionError,
    ResourceError,
    SortError,
    UndefinedOperation,
)
from .graphs import (
    SimpleGraph,
    exact_treewidth,
    gaifman,
    grid_graph,
    is_connected,
    structure_to_dot,
)
from .oracle import (
    ClosureEnumeration,
    CountingSentence,
    DiffReport,
    IsoSet,
    brute_abstraction,
    diff_closure_vs_automaton,
    enumerate_fusion_closure,
    enumerate_language,
    holds_counting_sentence,
)

__version__ = "0.1.0"
