"""fixerbench: protocol-conditional evaluation of LLM fixers on broken
GPU-kernel workspaces.

Every task starts from a recorded failing workspace; a fixer gets up to K
repair attempts under an explicit protocol vector (performance gate,
sampling strategy, feedback richness, history depth). The analytics layer
reports pass@k conditioned on that vector, the pass@1/debug-rate
decomposition, stagnation breakdowns, per-axis swing, Kendall tau ranking
stability, and an evaluation card disclosing the full protocol stack.
"""

from .backend import BackendHandle, ExecutionOutcome, execute_candidate, parse_timing, preflight
from .classifier import (
    Bucket,
    Category,
    ClassifierVerdict,
    classify_iteration,
    collapse_to_bucket,
    load_pattern_set,
)
from .corpus import (
    BrokenStart,
    DifficultyTier,
    LoadedCorpus,
    TaskSpec,
    induce_tiers,
    load_corpus,
    validate_task,
    write_corpus,
)
from .desk_corpus import generate_desk_corpus
from .errors import (
    ConfigurationError,
    EmptyCandidateError,
    EvaluationError,
    FixerbenchError,
    FixerUnavailableError,
    MeasurementError,
)
from .feedback import FeedbackConfig, FeedbackLevel, FeedbackMessage, render_feedback
from .fixer import FixerClient, FixerConfig, PromptBundle, extract_code, request_candidate
from .hashing import solution_hash
from .loop import (
    CallCountReport,
    IterationRecord,
    ProtocolConfig,
    Trajectory,
    apply_perf_gate,
    detect_stagnation,
    run_naive_schedule,
    run_phase_schedule,
    run_task_loop,
)
from .metrics import (
    MetricReport,
    TaskOutcome,
    TransitionMatrix,
    build_metric_report,
    debug_rate_at_k,
    fix_rate_by_bucket,
    pass_at_1,
    pass_at_k_asymmetric,
    pass_at_k_symmetric,
    progression_rate,
    stagnation_rates,
    transition_matrix,
    unique_approach_ratio,
)
from .robustness import (
    AxisSweepPlan,
    FlipResolution,
    RankingVector,
    emit_evaluation_card,
    flip_resolution,
    kendall_tau,
    rank_fixers,
    run_oat_sweep,
    swing,
)
from .timing import SpeedupMeasurement, compute_cv, measure_speedup

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
