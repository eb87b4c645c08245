"""Candidate execution under the task's native build/test commands.

Two executors share one contract: a subprocess backend that runs build_cmd
then test_cmd inside a fresh copy of the testbench (copy-on-run, so retries
never see stale artifacts), and a mock backend that replays scripted
per-candidate records for GPU-free, bit-deterministic tests. When a
gpu_lock_path is set, an advisory flock is held across the command phases
so concurrent loops never overlap on the device.
"""

from __future__ import annotations

import json
import re
import shutil
import subprocess
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator

from .errors import ConfigurationError, EvaluationError
from .hashing import solution_hash

if TYPE_CHECKING:
    from .corpus import TaskSpec

try:
    import fcntl
except ImportError:  # pragma: no cover - POSIX only
    fcntl = None

MOCK_SCRIPT_NAME = "mock_script.json"

# Backend kind tags as they appear in task manifests.
KIND_NVCC = "nvcc"
KIND_MAKE = "make"
KIND_KB = "kb"
KIND_MOCK = "mock"
BACKEND_KINDS = (KIND_NVCC, KIND_MAKE, KIND_KB, KIND_MOCK)

# Longer manifest spellings accepted for the same executors.
BACKEND_ALIASES = {
    "raw-compiler": KIND_NVCC,
    "project-makefile": KIND_MAKE,
    "kb-harness": KIND_KB,
}


def normalize_backend_kind(kind: str) -> str:
    kind = BACKEND_ALIASES.get(kind, kind)
    if kind not in BACKEND_KINDS:
        raise ConfigurationError(f"unknown backend kind {kind!r}")
    return kind


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of one execution stage (preflight, build, run or test)."""

    stage: str
    exit_status: int | None  # None iff the stage hit its time budget
    stdout: str
    stderr: str
    wall_time_ms: float
    timed_out: bool = False
    sanitizer_log: str | None = None

    @property
    def failed(self) -> bool:
        return self.timed_out or self.exit_status != 0


@dataclass
class BackendHandle:
    """Execution context for one backend kind."""

    kind: str
    workdir: Path
    build_timeout_s: int = 300
    test_timeout_s: int = 120
    gpu_lock_path: Path | None = None

    def __post_init__(self) -> None:
        self.kind = normalize_backend_kind(self.kind)
        self.workdir = Path(self.workdir)
        if self.build_timeout_s <= 0 or self.test_timeout_s <= 0:
            raise ConfigurationError("backend timeouts must be positive")
        if self.kind == KIND_MOCK:
            self.gpu_lock_path = None
        elif self.gpu_lock_path is not None:
            self.gpu_lock_path = Path(self.gpu_lock_path)


@contextmanager
def gpu_lock(path: Path | None) -> Iterator[None]:
    """Advisory per-GPU file lock; a no-op when no path is configured."""
    if path is None or fcntl is None:
        yield
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def preflight(
    spec: "TaskSpec", candidate: str, workspace: Path | None = None
) -> ExecutionOutcome:
    """Anti-cheat and editable-file checks before any command runs.

    Fails when a forbidden substring occurs anywhere in the candidate
    (literal, position-independent scan) or when the task's editable file is
    missing from the workspace; passes through otherwise.
    """
    for needle in spec.anti_cheat:
        if needle in candidate:
            return ExecutionOutcome(
                stage="preflight",
                exit_status=1,
                stdout="",
                stderr=(
                    "pre-flight anti-cheat violation: forbidden substring "
                    f"{needle!r} present in submitted solution"
                ),
                wall_time_ms=0.0,
            )
    if workspace is not None and not (Path(workspace) / spec.solution_file).exists():
        return ExecutionOutcome(
            stage="preflight",
            exit_status=1,
            stdout="",
            stderr=f"pre-flight: {spec.solution_file}: No such file in testbench",
            wall_time_ms=0.0,
        )
    return ExecutionOutcome(
        stage="preflight", exit_status=0, stdout="", stderr="", wall_time_ms=0.0
    )


def _timeout_marker(stage: str, budget_s: int) -> str:
    label = "BUILD" if stage == "build" else "TEST"
    return f"{label} TIMEOUT after {budget_s} s"


def _run_command(
    cmd: str, cwd: Path, budget_s: int, stage: str
) -> ExecutionOutcome:
    start = time.perf_counter()
    try:
        proc = subprocess.run(
            cmd,
            shell=True,
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=budget_s,
        )
    except subprocess.TimeoutExpired as exc:
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        stdout = exc.stdout.decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
        stderr = exc.stderr.decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        return ExecutionOutcome(
            stage=stage,
            exit_status=None,
            stdout=stdout,
            stderr=(stderr + "\n" if stderr else "") + _timeout_marker(stage, budget_s),
            wall_time_ms=max(elapsed_ms, budget_s * 1000.0),
            timed_out=True,
        )
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return ExecutionOutcome(
        stage=stage,
        exit_status=proc.returncode,
        stdout=proc.stdout,
        stderr=proc.stderr,
        wall_time_ms=elapsed_ms,
    )


def execute_candidate(
    handle: BackendHandle,
    spec: "TaskSpec",
    candidate: str,
    testbench: Path,
) -> list[ExecutionOutcome]:
    """Write the candidate into a fresh testbench copy and run build then test.

    Execution stops at the first failing stage. The per-GPU advisory lock is
    held while any command runs. Assumes preflight already passed.
    """
    if handle.kind == KIND_MOCK:
        return _execute_mock(handle, spec, candidate, testbench)

    handle.workdir.mkdir(parents=True, exist_ok=True)
    stem = spec.task_id.replace("/", "_")
    workspace = Path(tempfile.mkdtemp(prefix=f"{stem}-", dir=handle.workdir))
    shutil.copytree(testbench, workspace, dirs_exist_ok=True)
    (workspace / spec.solution_file).write_text(candidate, encoding="utf-8")

    outcomes: list[ExecutionOutcome] = []
    with gpu_lock(handle.gpu_lock_path):
        build = _run_command(spec.build_cmd, workspace, handle.build_timeout_s, "build")
        outcomes.append(build)
        if not build.failed:
            outcomes.append(
                _run_command(spec.test_cmd, workspace, handle.test_timeout_s, "run")
            )
    return outcomes


# ---------------------------------------------------------------------------
# Deterministic mock backend


@dataclass(frozen=True)
class MockPerfPlan:
    """Post hoc re-measurement behaviour scripted per candidate."""

    launch_stdouts: tuple[str, ...] | None = None
    build_fail: bool = False
    incompatible_arch: bool = False


@dataclass
class MockScript:
    """Scripted (stage, exit, stdout, stderr) records keyed by candidate hash."""

    by_hash: dict[str, list[dict]]
    default: list[dict] = field(default_factory=list)
    perf_by_hash: dict[str, MockPerfPlan] = field(default_factory=dict)

    def records_for(self, candidate_hash: str) -> list[dict]:
        records = self.by_hash.get(candidate_hash, self.default)
        if not records:
            raise EvaluationError(
                f"mock script has no record for hash {candidate_hash[:12]} and no default"
            )
        return records

    def perf_plan(self, candidate_hash: str) -> MockPerfPlan:
        return self.perf_by_hash.get(candidate_hash, MockPerfPlan())


def load_mock_script(testbench: Path) -> MockScript:
    path = Path(testbench) / MOCK_SCRIPT_NAME
    if not path.exists():
        raise EvaluationError(f"mock backend script missing: {path}")
    doc = json.loads(path.read_text())
    perf = {
        h: MockPerfPlan(
            launch_stdouts=tuple(p["launch_stdouts"]) if "launch_stdouts" in p else None,
            build_fail=bool(p.get("build_fail", False)),
            incompatible_arch=bool(p.get("incompatible_arch", False)),
        )
        for h, p in doc.get("perf", {}).items()
    }
    return MockScript(
        by_hash={h: list(recs) for h, recs in doc.get("by_hash", {}).items()},
        default=list(doc.get("default", [])),
        perf_by_hash=perf,
    )


def _record_to_outcome(record: dict, handle: BackendHandle) -> ExecutionOutcome:
    stage = record.get("stage", "build")
    timed_out = bool(record.get("timed_out", False))
    stderr = record.get("stderr", "")
    wall = float(record.get("wall_time_ms", 1.0))
    if timed_out:
        budget = handle.build_timeout_s if stage == "build" else handle.test_timeout_s
        wall = max(wall, budget * 1000.0)
        if "TIMEOUT" not in stderr:
            stderr = (stderr + "\n" if stderr else "") + _timeout_marker(stage, budget)
    return ExecutionOutcome(
        stage=stage,
        exit_status=None if timed_out else int(record.get("exit", 0)),
        stdout=record.get("stdout", ""),
        stderr=stderr,
        wall_time_ms=wall,
        timed_out=timed_out,
        sanitizer_log=record.get("sanitizer_log"),
    )


def _execute_mock(
    handle: BackendHandle, spec: "TaskSpec", candidate: str, testbench: Path
) -> list[ExecutionOutcome]:
    script = load_mock_script(testbench)
    outcomes: list[ExecutionOutcome] = []
    for record in script.records_for(solution_hash(candidate)):
        outcome = _record_to_outcome(record, handle)
        outcomes.append(outcome)
        if outcome.failed:
            break
    return outcomes


# ---------------------------------------------------------------------------
# Timing extraction


def parse_timing(spec: "TaskSpec", stdout: str) -> float | None:
    """Extract the reported kernel milliseconds from harness stdout.

    The task's timing_parser must carry exactly one capture group; the first
    matching line wins and its captured float is returned.
    """
    try:
        pattern = re.compile(spec.timing_parser)
    except re.error as exc:
        raise ConfigurationError(f"bad timing_parser for {spec.task_id}: {exc}") from exc
    if pattern.groups != 1:
        raise ConfigurationError(
            f"timing_parser for {spec.task_id} must have exactly one capture group"
        )
    for line in stdout.splitlines():
        match = pattern.search(line)
        if match:
            return float(match.group(1))
    return None
