"""The per-(fixer, task) debug loop and its schedulers.

One loop runs up to K iterations: build the prompt bundle (iterative mode
accumulates (candidate, feedback) pairs, repeated mode resets to the
initial prompt every attempt), request a candidate, execute, classify,
apply the performance gate on correctness passes, then stop on a full pass
or on the first stagnation signal. Signals are evaluated in fixed
precedence so the stop reason is unique when several co-fire:
duplicate_code, code_cycle, category_oscillation, no_progress.

The two-phase scheduler runs iteration 1 on every task, then finishes only
the phase-1 failures; with a deterministic fixer its trajectories are
byte-identical to the naive schedule and its call budget is N + (K-1)|F|.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

from .backend import (
    BackendHandle,
    ExecutionOutcome,
    execute_candidate,
    parse_timing,
    preflight,
)
from .classifier import (
    Bucket,
    Category,
    ClassifierVerdict,
    PatternSet,
    classify_iteration,
    collapse_to_bucket,
)
from .errors import (
    ConfigurationError,
    EmptyCandidateError,
    FixerUnavailableError,
    MeasurementError,
)
from .feedback import (
    FeedbackConfig,
    FeedbackLevel,
    ProfilerProvider,
    TemplateSet,
    render_feedback,
    render_perf_gate_feedback,
)
from .fixer import FixerClient, FixerConfig, build_bundle, extract_code
from .hashing import solution_hash
from .timing import SpeedupMeasurement, measure_speedup

if TYPE_CHECKING:
    from .corpus import BrokenStart, TaskSpec

ITERATIVE = "iterative"
REPEATED = "repeated"

STOP_PASSED = "passed"
STOP_DUPLICATE_CODE = "duplicate_code"
STOP_CODE_CYCLE = "code_cycle"
STOP_CATEGORY_OSCILLATION = "category_oscillation"
STOP_NO_PROGRESS = "no_progress"
STOP_MAX_ITERATIONS = "max_iterations"
STOP_FIXER_UNAVAILABLE = "fixer_unavailable"

# Precedence order for co-firing signals (also the dominant-signal tie-break).
STAGNATION_SIGNALS = (
    STOP_DUPLICATE_CODE,
    STOP_CODE_CYCLE,
    STOP_CATEGORY_OSCILLATION,
    STOP_NO_PROGRESS,
)

STOP_REASONS = (STOP_PASSED,) + STAGNATION_SIGNALS + (
    STOP_MAX_ITERATIONS,
    STOP_FIXER_UNAVAILABLE,
)

# Reserved signatures: harness-synthesized failures, not model behaviour.
FIXER_UNAVAILABLE_SIGNATURE = "fixer_unavailable"
EMPTY_CANDIDATE_SIGNATURE = "empty_candidate"


@dataclass(frozen=True)
class ProtocolConfig:
    """The evaluation-axis vector plus budgets: A = (p, sampling, level, H)."""

    k_budget: int = 5
    history_depth: int = 4
    feedback_level: FeedbackLevel = FeedbackLevel.L3
    sampling: str = ITERATIVE
    perf_gate_p: float = 0.7
    temperature: float | None = None  # None: 1.0 for repeated, fixer default otherwise
    osc_transitions: int = 3
    osc_window: int = 5
    no_progress_streak: int = 3

    def __post_init__(self) -> None:
        if self.k_budget < 1:
            raise ConfigurationError("k_budget must be >= 1")
        if not 1 <= self.history_depth <= 4:
            raise ConfigurationError("history_depth must be in 1..4")
        if self.sampling not in (ITERATIVE, REPEATED):
            raise ConfigurationError(f"unknown sampling mode {self.sampling!r}")
        if self.perf_gate_p < 0:
            raise ConfigurationError("perf_gate_p must be >= 0")
        object.__setattr__(
            self, "feedback_level", FeedbackLevel.parse(self.feedback_level)
        )

    def effective_temperature(self, fixer: FixerConfig) -> float:
        if self.temperature is not None:
            return self.temperature
        if self.sampling == REPEATED:
            return 1.0
        return fixer.temperature

    def to_dict(self) -> dict:
        return {
            "k_budget": self.k_budget,
            "history_depth": self.history_depth,
            "feedback_level": self.feedback_level.value,
            "sampling": self.sampling,
            "perf_gate_p": self.perf_gate_p,
            "temperature": self.temperature,
            "osc_transitions": self.osc_transitions,
            "osc_window": self.osc_window,
            "no_progress_streak": self.no_progress_streak,
        }


def apply_perf_gate(speedup: float | None, p: float) -> bool:
    """pass = correctness AND speedup >= p; p = 0 makes the gate vacuous."""
    if p <= 0:
        return True
    return speedup is not None and speedup >= p


@dataclass(frozen=True)
class IterationRecord:
    index: int  # 1-based
    candidate_hash: str
    category: Category
    bucket: Bucket
    primary_signature: str
    passed_correctness: bool
    speedup: float | None
    gate_passed: bool | None  # absent unless correctness passed
    feedback_level: FeedbackLevel
    wall_time_ms: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "candidate_hash": self.candidate_hash,
            "category": self.category.value,
            "bucket": self.bucket.value,
            "primary_signature": self.primary_signature,
            "passed_correctness": self.passed_correctness,
            "speedup": self.speedup,
            "gate_passed": self.gate_passed,
            "feedback_level": self.feedback_level.value,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IterationRecord":
        return cls(
            index=doc["index"],
            candidate_hash=doc["candidate_hash"],
            category=Category(doc["category"]),
            bucket=Bucket(doc["bucket"]),
            primary_signature=doc["primary_signature"],
            passed_correctness=doc["passed_correctness"],
            speedup=doc["speedup"],
            gate_passed=doc["gate_passed"],
            feedback_level=FeedbackLevel.parse(doc["feedback_level"]),
            wall_time_ms=doc["wall_time_ms"],
        )


@dataclass
class Trajectory:
    task_id: str
    fixer_name: str
    records: list[IterationRecord]
    stop_reason: str

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "fixer_name": self.fixer_name,
            "stop_reason": self.stop_reason,
            "records": [r.to_dict() for r in self.records],
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        return cls(
            task_id=doc["task_id"],
            fixer_name=doc["fixer_name"],
            stop_reason=doc["stop_reason"],
            records=[IterationRecord.from_dict(r) for r in doc["records"]],
        )


def _is_model_code(record: IterationRecord) -> bool:
    return record.primary_signature != FIXER_UNAVAILABLE_SIGNATURE


def detect_stagnation(
    records: Sequence[IterationRecord],
    *,
    osc_transitions: int = 3,
    osc_window: int = 5,
    no_progress_streak: int = 3,
) -> str | None:
    """First stagnation signal fired by the trajectory so far, if any.

    duplicate_code: current hash equals the immediately previous one.
    code_cycle: current hash equals any strictly earlier, non-adjacent one.
    category_oscillation: >= osc_transitions category transitions within the
    last osc_window iterations. no_progress: identical (category, signature)
    across no_progress_streak consecutive iterations. Iterations synthesized
    for an unavailable fixer never count as resubmitted code or progress.
    """
    if not records:
        return None
    n = len(records)
    current = records[-1]

    if (
        n >= 2
        and _is_model_code(current)
        and _is_model_code(records[-2])
        and current.candidate_hash == records[-2].candidate_hash
    ):
        return STOP_DUPLICATE_CODE

    if _is_model_code(current) and any(
        _is_model_code(records[i]) and current.candidate_hash == records[i].candidate_hash
        for i in range(n - 2)
    ):
        return STOP_CODE_CYCLE

    lo = max(2, n - (osc_window - 1))  # 1-based positions compared to their predecessor
    transitions = sum(
        1
        for t in range(lo, n + 1)
        if records[t - 1].category != records[t - 2].category
    )
    if transitions >= osc_transitions:
        return STOP_CATEGORY_OSCILLATION

    if n >= no_progress_streak:
        tail = records[-no_progress_streak:]
        keys = {(r.category, r.primary_signature) for r in tail}
        if len(keys) == 1 and all(_is_model_code(r) for r in tail):
            return STOP_NO_PROGRESS
    return None


class LoopRecorder:
    """Persistence hooks invoked by the loop; the default discards everything."""

    def on_response(
        self, fixer_name: str, task_stem: str, iteration: int, raw: str
    ) -> None:  # pragma: no cover - interface
        pass

    def on_iteration(
        self,
        fixer_name: str,
        task_id: str,
        record: IterationRecord,
        outcomes: Sequence[ExecutionOutcome],
        candidate_text: str | None,
        measurement: SpeedupMeasurement | None,
    ) -> None:  # pragma: no cover - interface
        pass

    def on_trajectory(self, trajectory: Trajectory) -> None:  # pragma: no cover
        pass


class TaskLoopRunner:
    """Stepper for one (fixer, task) loop, shared by both schedulers."""

    def __init__(
        self,
        cfg: ProtocolConfig,
        client: FixerClient,
        spec: "TaskSpec",
        broken: "BrokenStart",
        handle: BackendHandle,
        *,
        recorder: LoopRecorder | None = None,
        pattern_set: PatternSet | None = None,
        templates: TemplateSet | None = None,
        feedback_config: FeedbackConfig | None = None,
        profiler_provider: ProfilerProvider | None = None,
    ) -> None:
        self.cfg = cfg
        self.client = client
        self.spec = spec
        self.broken = broken
        self.handle = handle
        self.recorder = recorder or LoopRecorder()
        self.pattern_set = pattern_set
        self.templates = templates
        self.feedback_config = feedback_config
        self.profiler_provider = profiler_provider
        self.records: list[IterationRecord] = []
        self.stop_reason: str | None = None
        self._history: list[tuple[str, str]] = []

    @property
    def finished(self) -> bool:
        return self.stop_reason is not None

    def _bundle(self):
        history = [] if self.cfg.sampling == REPEATED else self._history
        return build_bundle(
            self.broken.prompt,
            self.broken.broken_kernel,
            self.broken.error_log,
            history,
            self.cfg.history_depth,
        )

    def _classify_candidate(
        self, candidate: str
    ) -> tuple[ClassifierVerdict, list[ExecutionOutcome]]:
        if not candidate.strip():
            outcomes = [
                ExecutionOutcome(
                    stage="build",
                    exit_status=1,
                    stdout="",
                    stderr="empty candidate: the fixer response contained no extractable code",
                    wall_time_ms=0.0,
                )
            ]
            verdict = ClassifierVerdict(
                category=Category.BUILDABILITY,
                bucket=Bucket.COMPILE_ERROR,
                primary_signature=EMPTY_CANDIDATE_SIGNATURE,
                unclassified=False,
                matched_stage="build",
            )
            return verdict, outcomes
        gate = preflight(self.spec, candidate, workspace=self.broken.native_harness)
        if gate.failed:
            outcomes = [gate]
        else:
            outcomes = execute_candidate(
                self.handle, self.spec, candidate, self.broken.native_harness
            )
        return classify_iteration(outcomes, self.pattern_set), outcomes

    def _measure(
        self, candidate: str, outcomes: Sequence[ExecutionOutcome]
    ) -> SpeedupMeasurement | None:
        if not self.spec.reference_mean_ms:
            return None
        runtime_stdout = ""
        for outcome in outcomes:
            if outcome.stage in ("run", "test"):
                runtime_stdout = outcome.stdout
        fallback_ms = (
            parse_timing(self.spec, runtime_stdout) if self.spec.timing_parser else None
        )
        try:
            return measure_speedup(
                self.handle,
                self.spec,
                candidate,
                self.spec.reference_mean_ms,
                testbench=self.broken.native_harness,
                fallback_ms=fallback_ms,
            )
        except MeasurementError:
            return None

    def _append(
        self,
        record: IterationRecord,
        outcomes: Sequence[ExecutionOutcome],
        candidate: str | None,
        measurement: SpeedupMeasurement | None,
    ) -> None:
        self.records.append(record)
        self.recorder.on_iteration(
            self.client.name, self.spec.task_id, record, outcomes, candidate, measurement
        )

    def step(self) -> None:
        """Run one iteration; sets stop_reason when the loop terminates."""
        if self.finished:
            return
        index = len(self.records) + 1
        level = self.cfg.feedback_level

        try:
            raw = self.client.request(
                self._bundle(),
                task_stem=self.spec.stem,
                iteration=index,
                temperature=self.cfg.effective_temperature(self.client.cfg),
            )
        except FixerUnavailableError:
            record = IterationRecord(
                index=index,
                candidate_hash="",
                category=Category.BUILDABILITY,
                bucket=Bucket.COMPILE_ERROR,
                primary_signature=FIXER_UNAVAILABLE_SIGNATURE,
                passed_correctness=False,
                speedup=None,
                gate_passed=None,
                feedback_level=level,
                wall_time_ms=0.0,
            )
            self._append(record, [], None, None)
            self.stop_reason = STOP_FIXER_UNAVAILABLE
            return

        self.recorder.on_response(self.client.name, self.spec.stem, index, raw)
        try:
            candidate = extract_code(raw)
        except EmptyCandidateError:
            candidate = ""

        verdict, outcomes = self._classify_candidate(candidate)
        passed_correctness = verdict.category is Category.PASSED

        measurement = None
        speedup = None
        gate_passed: bool | None = None
        if passed_correctness:
            measurement = self._measure(candidate, outcomes)
            speedup = measurement.speedup if measurement else None
            gate_passed = apply_perf_gate(speedup, self.cfg.perf_gate_p)

        record = IterationRecord(
            index=index,
            candidate_hash=solution_hash(candidate),
            category=verdict.category,
            bucket=collapse_to_bucket(
                verdict.category,
                perf_gate_failed=passed_correctness and not gate_passed,
            ),
            primary_signature=verdict.primary_signature,
            passed_correctness=passed_correctness,
            speedup=speedup,
            gate_passed=gate_passed,
            feedback_level=level,
            wall_time_ms=sum(o.wall_time_ms for o in outcomes),
        )
        self._append(record, outcomes, candidate, measurement)

        if passed_correctness and gate_passed:
            self.stop_reason = STOP_PASSED
            return
        signal = detect_stagnation(
            self.records,
            osc_transitions=self.cfg.osc_transitions,
            osc_window=self.cfg.osc_window,
            no_progress_streak=self.cfg.no_progress_streak,
        )
        if signal is not None:
            self.stop_reason = signal
            return
        if index >= self.cfg.k_budget:
            self.stop_reason = STOP_MAX_ITERATIONS
            return

        # Loop continues: render feedback and extend the exchange history.
        if passed_correctness:
            message = render_perf_gate_feedback(
                speedup,
                self.cfg.perf_gate_p,
                level,
                config=self.feedback_config,
                templates=self.templates,
            )
        else:
            message = render_feedback(
                verdict,
                outcomes,
                level,
                config=self.feedback_config,
                templates=self.templates,
                profiler_provider=self.profiler_provider,
            )
        self._history.append((candidate, message.body))

    def run_to_completion(self) -> "Trajectory":
        while not self.finished:
            self.step()
        return self.finish()

    def finish(self) -> "Trajectory":
        if not self.finished:
            raise ConfigurationError("loop still running; call step() until finished")
        trajectory = Trajectory(
            task_id=self.spec.task_id,
            fixer_name=self.client.name,
            records=list(self.records),
            stop_reason=self.stop_reason or STOP_MAX_ITERATIONS,
        )
        self.recorder.on_trajectory(trajectory)
        return trajectory


def _as_client(fixer: "FixerClient | FixerConfig") -> FixerClient:
    # Anything request-shaped passes through (scripted fakes in tests).
    return FixerClient(fixer) if isinstance(fixer, FixerConfig) else fixer


def run_task_loop(
    cfg: ProtocolConfig,
    fixer: "FixerClient | FixerConfig",
    spec: "TaskSpec",
    broken: "BrokenStart",
    handle: BackendHandle,
    **runner_kwargs,
) -> Trajectory:
    """Drive one (fixer, task) loop to termination."""
    runner = TaskLoopRunner(cfg, _as_client(fixer), spec, broken, handle, **runner_kwargs)
    return runner.run_to_completion()


@dataclass(frozen=True)
class CallCountReport:
    n_tasks: int
    phase1_failures: int
    phase1_calls: int
    phase2_calls: int
    total_calls: int
    budget: int  # N + (K-1)|F|

    def to_dict(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "phase1_failures": self.phase1_failures,
            "phase1_calls": self.phase1_calls,
            "phase2_calls": self.phase2_calls,
            "total_calls": self.total_calls,
            "budget": self.budget,
        }


HandleFactory = Callable[["TaskSpec", "BrokenStart"], BackendHandle]


def _handle_for(backend, spec, broken) -> BackendHandle:
    return backend(spec, broken) if callable(backend) else backend


def run_naive_schedule(
    cfg: ProtocolConfig,
    fixer: "FixerClient | FixerConfig",
    tasks: Sequence[tuple["TaskSpec", "BrokenStart"]],
    backend: "BackendHandle | HandleFactory",
    **runner_kwargs,
) -> list[Trajectory]:
    """Run every task's loop to completion, one after another."""
    client = _as_client(fixer)
    return [
        TaskLoopRunner(
            cfg, client, spec, broken, _handle_for(backend, spec, broken), **runner_kwargs
        ).run_to_completion()
        for spec, broken in tasks
    ]


def run_phase_schedule(
    cfg: ProtocolConfig,
    fixer: "FixerClient | FixerConfig",
    tasks: Sequence[tuple["TaskSpec", "BrokenStart"]],
    backend: "BackendHandle | HandleFactory",
    **runner_kwargs,
) -> tuple[list[Trajectory], CallCountReport]:
    """Two-phase scheduling: iteration 1 everywhere, then finish the failures.

    Per-task trajectories coincide with the naive schedule by construction
    for a deterministic fixer; the fixer-call budget is N + (K-1)|F|.
    """
    client = _as_client(fixer)
    calls_before = client.calls
    runners = [
        TaskLoopRunner(
            cfg, client, spec, broken, _handle_for(backend, spec, broken), **runner_kwargs
        )
        for spec, broken in tasks
    ]

    for runner in runners:
        runner.step()
    phase1_calls = client.calls - calls_before
    failures = [r for r in runners if r.stop_reason != STOP_PASSED]

    for runner in failures:
        while not runner.finished:
            runner.step()
    total_calls = client.calls - calls_before

    trajectories = [runner.finish() for runner in runners]
    report = CallCountReport(
        n_tasks=len(runners),
        phase1_failures=len(failures),
        phase1_calls=phase1_calls,
        phase2_calls=total_calls - phase1_calls,
        total_calls=total_calls,
        budget=len(runners) + (cfg.k_budget - 1) * len(failures),
    )
    return trajectories, report
