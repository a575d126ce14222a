"""Robustness verification for feed-forward ReLU networks with early exits."""

from .network import (
    LAST,
    AffineLayer,
    EENetwork,
    ExitHead,
    InferenceResult,
    NetworkFormatError,
    SynthSpec,
    Trace,
    forward_logits,
    gen_synthetic,
    infer,
    infer_batch,
    load_network,
    save_network,
    softmax,
    trace,
)
from .intervals import BoxDomain, Interval, LayerBounds, ball, propagate, softmax_prob_bounds
from .solver import (
    Atom,
    AtomKind,
    AtomStatus,
    Conjunction,
    SolveResult,
    SolveStatus,
    SolverConfig,
    atom_status,
    eval_atoms_exact,
    solve,
)
from .queries import (
    QuerySpec,
    break_query,
    continue_check,
    make_query,
    negated_robustness,
    runner_up_query,
    vanilla_query,
)
from .verify import (
    ALGORITHMS,
    RunRecord,
    Verdict,
    VerdictStatus,
    exists_prev_cex,
    verify_baseline,
    verify_break,
    verify_combined,
    verify_continue,
    verify_vanilla,
)
from .oracle import (
    AttackBudget,
    OracleStatus,
    OracleVerdict,
    attack_search,
    decide_reference,
    route_scores,
    sampled_route_score_max,
    trace_stability_estimate,
)

__version__ = "0.1.0"
