"""The metric family computed from stored trajectories.

All rates are exact ratios of integer counts; rounding happens only at
report-rendering time. pass@k supports the asymmetric budget rule: when
the fixer under evaluation is also the model that produced a task's broken
start, that task's effective budget is k - 1 (the broken start already is
the fixer's own first attempt). Re-analysis at a different performance-gate
threshold never re-executes anything: the gate is a post hoc predicate
over stored per-iteration speedups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from .classifier import CATEGORY_ORDER, Bucket, Category
from .loop import (
    FIXER_UNAVAILABLE_SIGNATURE,
    STAGNATION_SIGNALS,
    STOP_CATEGORY_OSCILLATION,
    STOP_PASSED,
    Trajectory,
    apply_perf_gate,
    detect_stagnation,
)

if TYPE_CHECKING:
    from .corpus import TaskSpec
    from .fixer import FixerConfig

# Curation-time buckets a task can carry (passed is not a curation label).
CURATION_BUCKETS = (
    Bucket.COMPILE_ERROR,
    Bucket.LOGIC_ERROR,
    Bucket.PERF_BROKEN,
    Bucket.MEMORY_CRASH,
    Bucket.TIMEOUT,
)

# Monotone severity order used by progression_rate: compile-stage failures,
# then runtime crashes, then wrong answers, then passing.
_SEVERITY_RANK = {
    Category.BUILDABILITY: 0,
    Category.INTEGRATION: 0,
    Category.ENVIRONMENT_DEPENDENCY: 0,
    Category.OUT_OF_MEMORY: 1,
    Category.ILLEGAL_MEMORY_ACCESS: 1,
    Category.TIMEOUT: 1,
    Category.FUNCTIONAL_CORRECTNESS: 2,
    Category.PASSED: 3,
}


@dataclass(frozen=True)
class IterationSummary:
    category: Category
    signature: str
    candidate_hash: str
    passed_correctness: bool
    speedup: float | None
    gate_passed: bool | None
    bucket: Bucket


@dataclass
class TaskOutcome:
    """Lossless per-task digest of one trajectory plus task metadata."""

    task_id: str
    fixer_name: str
    stop_reason: str
    iterations: list[IterationSummary]
    initial_bucket: Bucket | None = None
    source_model: str = "manual"

    @property
    def passed_at(self) -> int | None:
        """First iteration passing the full gate at the gate the run used."""
        for i, it in enumerate(self.iterations, start=1):
            if it.passed_correctness and it.gate_passed:
                return i
        return None

    def passed_at_gate(self, gate_p: float | None) -> int | None:
        """First full-gate pass with the gate re-applied post hoc at gate_p."""
        if gate_p is None:
            return self.passed_at
        for i, it in enumerate(self.iterations, start=1):
            if it.passed_correctness and apply_perf_gate(it.speedup, gate_p):
                return i
        return None

    @property
    def curation_bucket(self) -> Bucket | None:
        if self.initial_bucket is not None:
            return self.initial_bucket
        return self.iterations[0].bucket if self.iterations else None

    @classmethod
    def from_trajectory(
        cls, trajectory: Trajectory, spec: "TaskSpec | None" = None
    ) -> "TaskOutcome":
        iterations = [
            IterationSummary(
                category=r.category,
                signature=r.primary_signature,
                candidate_hash=r.candidate_hash,
                passed_correctness=r.passed_correctness,
                speedup=r.speedup,
                gate_passed=r.gate_passed,
                bucket=r.bucket,
            )
            for r in trajectory.records
        ]
        bucket = None
        source = "manual"
        if spec is not None:
            source = spec.source_model
            if spec.curation_bucket:
                bucket = Bucket(spec.curation_bucket)
        return cls(
            task_id=trajectory.task_id,
            fixer_name=trajectory.fixer_name,
            stop_reason=trajectory.stop_reason,
            iterations=iterations,
            initial_bucket=bucket,
            source_model=source,
        )


def outcomes_from_trajectories(
    trajectories: Iterable[Trajectory],
    specs: "Iterable[TaskSpec] | None" = None,
) -> list[TaskOutcome]:
    by_id = {s.task_id: s for s in specs} if specs else {}
    return [
        TaskOutcome.from_trajectory(t, by_id.get(t.task_id)) for t in trajectories
    ]


# ---------------------------------------------------------------------------
# pass@k family


def effective_k(fixer: "FixerConfig", outcome: TaskOutcome, k: int) -> int:
    """Budget equalization: one fewer counted iteration on self-source tasks."""
    if fixer.is_source_model and outcome.source_model == fixer.name:
        return k - 1
    return k


def pass_at_1(
    outcomes: Sequence[TaskOutcome], gate_p: float | None = None
) -> float | None:
    if not outcomes:
        return None
    return sum(1 for o in outcomes if o.passed_at_gate(gate_p) == 1) / len(outcomes)


def pass_at_k_symmetric(
    outcomes: Sequence[TaskOutcome], k: int, gate_p: float | None = None
) -> float | None:
    if not outcomes:
        return None
    hits = sum(
        1
        for o in outcomes
        if (p := o.passed_at_gate(gate_p)) is not None and p <= k
    )
    return hits / len(outcomes)


def pass_at_k_asymmetric(
    outcomes: Sequence[TaskOutcome],
    fixer: "FixerConfig",
    k: int,
    gate_p: float | None = None,
) -> float | None:
    """Mean pass within k attempts, with k - 1 for the fixer's own sources."""
    if not outcomes:
        return None
    hits = sum(
        1
        for o in outcomes
        if (p := o.passed_at_gate(gate_p)) is not None and p <= effective_k(fixer, o, k)
    )
    return hits / len(outcomes)


def debug_rate_at_k(
    outcomes: Sequence[TaskOutcome],
    k: int,
    fixer: "FixerConfig | None" = None,
    gate_p: float | None = None,
) -> float | None:
    """Among tasks failing at iteration 1, the fraction repaired by k.

    Passing fixer applies the asymmetric budget so the decomposition
    identity pass@k = pass@1 + (1 - pass@1) * debug_rate@k holds against
    the matching pass@k variant.
    """
    failed_first = [o for o in outcomes if o.passed_at_gate(gate_p) != 1]
    if not failed_first:
        return None
    repaired = 0
    for o in failed_first:
        k_eff = effective_k(fixer, o, k) if fixer is not None else k
        p = o.passed_at_gate(gate_p)
        if p is not None and p <= k_eff:
            repaired += 1
    return repaired / len(failed_first)


def fix_rate_by_bucket(
    outcomes: Sequence[TaskOutcome], bucket: Bucket, gate_p: float = 0.0
) -> float | None:
    """Fraction of tasks with the given curation bucket that ever pass.

    Report tables use correctness-only scoring (gate_p = 0); callers may
    re-apply any gate post hoc.
    """
    members = [o for o in outcomes if o.curation_bucket == bucket]
    if not members:
        return None
    solved = sum(1 for o in members if o.passed_at_gate(gate_p) is not None)
    return solved / len(members)


def fix_rates(
    outcomes: Sequence[TaskOutcome], gate_p: float = 0.0
) -> dict[Bucket, float | None]:
    return {b: fix_rate_by_bucket(outcomes, b, gate_p) for b in CURATION_BUCKETS}


def bucket_counts(outcomes: Sequence[TaskOutcome]) -> dict[Bucket, int]:
    counts = {b: 0 for b in CURATION_BUCKETS}
    for o in outcomes:
        bucket = o.curation_bucket
        if bucket in counts:
            counts[bucket] += 1
    return counts


# ---------------------------------------------------------------------------
# Stagnation and trajectory-quality metrics


@dataclass(frozen=True)
class StagnationBreakdown:
    n_fail: int
    overall: float | None
    per_signal: dict[str, float | None]
    dominant_signal: str | None

    def to_dict(self) -> dict:
        return {
            "n_fail": self.n_fail,
            "overall": self.overall,
            "per_signal": dict(self.per_signal),
            "dominant_signal": self.dominant_signal,
        }


def failing(outcomes: Sequence[TaskOutcome]) -> list[TaskOutcome]:
    return [o for o in outcomes if o.stop_reason != STOP_PASSED]


def stagnation_rates(outcomes: Sequence[TaskOutcome]) -> StagnationBreakdown:
    """Per-signal stop-reason fractions over failing tasks.

    The four signal columns sum to the overall rate by construction; the
    dominant signal breaks ties by the signal precedence order.
    """
    failed = failing(outcomes)
    n_fail = len(failed)
    if n_fail == 0:
        return StagnationBreakdown(
            n_fail=0,
            overall=None,
            per_signal={s: None for s in STAGNATION_SIGNALS},
            dominant_signal=None,
        )
    per_signal = {
        s: sum(1 for o in failed if o.stop_reason == s) / n_fail
        for s in STAGNATION_SIGNALS
    }
    overall = sum(per_signal.values())
    dominant = max(
        STAGNATION_SIGNALS,
        key=lambda s: (per_signal[s], -STAGNATION_SIGNALS.index(s)),
    )
    return StagnationBreakdown(
        n_fail=n_fail,
        overall=overall,
        per_signal=per_signal,
        dominant_signal=dominant,
    )


def oscillation_rate(outcomes: Sequence[TaskOutcome]) -> float | None:
    failed = failing(outcomes)
    if not failed:
        return None
    hits = sum(1 for o in failed if o.stop_reason == STOP_CATEGORY_OSCILLATION)
    return hits / len(failed)


def progression_rate(outcomes: Sequence[TaskOutcome]) -> float | None:
    """Failing tasks with at least one forward move in the severity order."""
    failed = failing(outcomes)
    if not failed:
        return None

    def progresses(outcome: TaskOutcome) -> bool:
        cats = [it.category for it in outcome.iterations]
        return any(
            _SEVERITY_RANK[b] > _SEVERITY_RANK[a] for a, b in zip(cats, cats[1:])
        )

    return sum(1 for o in failed if progresses(o)) / len(failed)


def unique_approach_ratio(outcomes: Sequence[TaskOutcome]) -> float | None:
    """Distinct solution hashes over total iterations across the whole run.

    Iterations synthesized for an unavailable fixer carry no solution code
    and contribute to the denominator only.
    """
    total = sum(len(o.iterations) for o in outcomes)
    if total == 0:
        return None
    hashes = {
        it.candidate_hash
        for o in outcomes
        for it in o.iterations
        if it.signature != FIXER_UNAVAILABLE_SIGNATURE
    }
    return len(hashes) / total


# Shim with the attribute names detect_stagnation expects.
@dataclass(frozen=True)
class _ReplayRecord:
    candidate_hash: str
    category: Category
    primary_signature: str


def stagnation_refire_rate(
    outcomes: Sequence[TaskOutcome],
    *,
    osc_transitions: int = 3,
    osc_window: int = 5,
    no_progress_streak: int = 3,
) -> float | None:
    """Re-run the stagnation detector on stored trajectories under variant
    thresholds: the fraction of failing tasks where any signal would fire."""
    failed = failing(outcomes)
    if not failed:
        return None

    def refires(outcome: TaskOutcome) -> bool:
        replay: list[_ReplayRecord] = []
        for it in outcome.iterations:
            replay.append(
                _ReplayRecord(
                    candidate_hash=it.candidate_hash,
                    category=it.category,
                    primary_signature=it.signature,
                )
            )
            if detect_stagnation(
                replay,
                osc_transitions=osc_transitions,
                osc_window=osc_window,
                no_progress_streak=no_progress_streak,
            ):
                return True
        return False

    return sum(1 for o in failed if refires(o)) / len(failed)


# ---------------------------------------------------------------------------
# Error-transition matrix


@dataclass
class TransitionMatrix:
    """Row-stochastic 8x8 matrix of adjacent-iteration category transitions."""

    entries: list[list[float]]
    support_counts: list[list[int]]

    @property
    def categories(self) -> tuple[Category, ...]:
        return CATEGORY_ORDER

    def row(self, category: Category) -> dict[Category, float]:
        i = CATEGORY_ORDER.index(category)
        return {c: self.entries[i][j] for j, c in enumerate(CATEGORY_ORDER)}

    def to_dict(self) -> dict:
        return {
            "categories": [c.value for c in CATEGORY_ORDER],
            "entries": self.entries,
            "support_counts": self.support_counts,
        }


def transition_matrix(outcomes: Sequence[TaskOutcome]) -> TransitionMatrix:
    n = len(CATEGORY_ORDER)
    index = {c: i for i, c in enumerate(CATEGORY_ORDER)}
    counts = [[0] * n for _ in range(n)]
    for outcome in outcomes:
        cats = [it.category for it in outcome.iterations]
        for a, b in zip(cats, cats[1:]):
            counts[index[a]][index[b]] += 1
    entries = []
    for row in counts:
        total = sum(row)
        entries.append([c / total if total else 0.0 for c in row])
    return TransitionMatrix(entries=entries, support_counts=counts)


# ---------------------------------------------------------------------------
# Aggregate report


@dataclass
class MetricReport:
    """Per-fixer aggregate over one stored outcome set."""

    fixer_name: str
    n_tasks: int
    k: int
    gate_p: float
    pass_at_1: float | None
    pass_at_k: float | None  # asymmetric headline
    pass_at_k_symmetric: float | None
    debug_rate_at_k: float | None
    fix_rate: dict[Bucket, float | None] = field(default_factory=dict)
    bucket_n: dict[Bucket, int] = field(default_factory=dict)
    stagnation: StagnationBreakdown | None = None
    oscillation_rate: float | None = None
    progression_rate: float | None = None
    unique_approach_ratio: float | None = None
    n_fail: int = 0
    dominant_signal: str | None = None
    transition: TransitionMatrix | None = None

    def to_dict(self) -> dict:
        return {
            "fixer_name": self.fixer_name,
            "n_tasks": self.n_tasks,
            "k": self.k,
            "gate_p": self.gate_p,
            "pass_at_1": self.pass_at_1,
            "pass_at_k": self.pass_at_k,
            "pass_at_k_symmetric": self.pass_at_k_symmetric,
            "debug_rate_at_k": self.debug_rate_at_k,
            "fix_rate": {b.value: v for b, v in self.fix_rate.items()},
            "bucket_n": {b.value: v for b, v in self.bucket_n.items()},
            "stagnation": self.stagnation.to_dict() if self.stagnation else None,
            "oscillation_rate": self.oscillation_rate,
            "progression_rate": self.progression_rate,
            "unique_approach_ratio": self.unique_approach_ratio,
            "n_fail": self.n_fail,
            "dominant_signal": self.dominant_signal,
            "transition": self.transition.to_dict() if self.transition else None,
        }


def build_metric_report(
    outcomes: Sequence[TaskOutcome],
    fixer: "FixerConfig",
    k: int,
    gate_p: float,
    *,
    reapply_gate: bool = False,
    fix_rate_gate_p: float = 0.0,
) -> MetricReport:
    """Compute the full metric family for one fixer.

    With reapply_gate the stored speedups are re-gated at gate_p (used by
    threshold sweeps); otherwise the run-time gate decisions stand.
    """
    gate = gate_p if reapply_gate else None
    stagnation = stagnation_rates(outcomes)
    return MetricReport(
        fixer_name=fixer.name,
        n_tasks=len(outcomes),
        k=k,
        gate_p=gate_p,
        pass_at_1=pass_at_1(outcomes, gate),
        pass_at_k=pass_at_k_asymmetric(outcomes, fixer, k, gate),
        pass_at_k_symmetric=pass_at_k_symmetric(outcomes, k, gate),
        debug_rate_at_k=debug_rate_at_k(outcomes, k, fixer, gate),
        fix_rate=fix_rates(outcomes, fix_rate_gate_p),
        bucket_n=bucket_counts(outcomes),
        stagnation=stagnation,
        oscillation_rate=oscillation_rate(outcomes),
        progression_rate=progression_rate(outcomes),
        unique_approach_ratio=unique_approach_ratio(outcomes),
        n_fail=stagnation.n_fail,
        dominant_signal=stagnation.dominant_signal,
        transition=transition_matrix(outcomes),
    )
