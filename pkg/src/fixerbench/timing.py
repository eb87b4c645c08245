"""Post hoc speedup re-measurement with launch repetition and CV flagging.

A passing candidate is re-launched ten times; the coefficient of variation
across the ten outer means is reported alongside the speedup as a quality
flag at the 3% threshold. The flag is reported, not enforced: high-CV
measurements are retained to avoid selection bias. When the perf-mode
build fails or the architecture is incompatible, measurement falls back to
the single harness-run timing and CV is absent.
"""

from __future__ import annotations

import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import TYPE_CHECKING

from .backend import (
    KIND_MOCK,
    BackendHandle,
    gpu_lock,
    load_mock_script,
    parse_timing,
)
from .errors import MeasurementError
from .hashing import solution_hash

if TYPE_CHECKING:
    from .corpus import TaskSpec

N_LAUNCHES = 10
CV_FLAG_THRESHOLD = 0.03


@dataclass(frozen=True)
class SpeedupMeasurement:
    candidate_mean_ms: float
    reference_mean_ms: float
    speedup: float
    launch_means_ms: tuple[float, ...]
    cv: float | None  # present iff the full 10-launch protocol ran
    cv_flagged: bool  # strict: cv > 0.03
    fallback_single_launch: bool


def compute_cv(values: list[float] | tuple[float, ...]) -> float:
    """Population standard deviation over mean of the launch means."""
    if not values:
        raise MeasurementError("compute_cv requires at least one value")
    mu = fmean(values)
    if mu <= 0:
        raise MeasurementError("compute_cv requires a positive mean")
    sigma = math.sqrt(fmean([(v - mu) ** 2 for v in values]))
    return sigma / mu


def _measurement(
    launches: list[float], reference_mean_ms: float, fallback: bool
) -> SpeedupMeasurement:
    mean_ms = fmean(launches)
    if mean_ms <= 0:
        raise MeasurementError("candidate mean must be positive")
    cv = compute_cv(launches) if len(launches) == N_LAUNCHES else None
    return SpeedupMeasurement(
        candidate_mean_ms=mean_ms,
        reference_mean_ms=reference_mean_ms,
        speedup=reference_mean_ms / mean_ms,
        launch_means_ms=tuple(launches),
        cv=cv,
        cv_flagged=cv is not None and cv > CV_FLAG_THRESHOLD,
        fallback_single_launch=fallback,
    )


def _single_launch(
    reference_mean_ms: float, fallback_ms: float | None
) -> SpeedupMeasurement:
    if fallback_ms is None or fallback_ms <= 0:
        raise MeasurementError("no usable single-launch timing for fallback")
    return _measurement([fallback_ms], reference_mean_ms, fallback=True)


def _mock_launch_stdouts(spec: "TaskSpec", testbench: Path, candidate: str):
    script = load_mock_script(testbench)
    plan = script.perf_plan(solution_hash(candidate))
    if plan.build_fail or plan.incompatible_arch:
        return None
    if plan.launch_stdouts is not None:
        return list(plan.launch_stdouts)
    records = script.records_for(solution_hash(candidate))
    terminal = [r for r in records if r.get("stage") in ("run", "test")]
    if not terminal or int(terminal[-1].get("exit", 1)) != 0:
        raise MeasurementError(
            f"mock script for {spec.task_id} has no passing run to re-launch"
        )
    return [terminal[-1].get("stdout", "")] * N_LAUNCHES


def measure_speedup(
    handle: BackendHandle,
    spec: "TaskSpec",
    candidate: str,
    reference_mean_ms: float,
    *,
    testbench: Path,
    fallback_ms: float | None = None,
) -> SpeedupMeasurement:
    """Re-launch a correctness-passing candidate ten times and compute speedup.

    speedup = reference_mean_ms / candidate_mean_ms over the outer mean.
    fallback_ms is the single harness-run timing used when the perf-mode
    build fails or the architecture is incompatible.
    """
    if reference_mean_ms <= 0:
        raise MeasurementError("reference_mean_ms must be positive")

    if handle.kind == KIND_MOCK:
        stdouts = _mock_launch_stdouts(spec, testbench, candidate)
        if stdouts is None:
            return _single_launch(reference_mean_ms, fallback_ms)
        launches = [v for v in (parse_timing(spec, s) for s in stdouts) if v is not None]
        if not launches:
            raise MeasurementError(f"all {len(stdouts)} launches unparsable")
        return _measurement(launches, reference_mean_ms, fallback=False)

    # Subprocess path: one perf-mode build, then ten serialized launches.
    handle.workdir.mkdir(parents=True, exist_ok=True)
    workspace = Path(tempfile.mkdtemp(prefix=f"{spec.stem}-perf-", dir=handle.workdir))
    shutil.copytree(testbench, workspace, dirs_exist_ok=True)
    (workspace / spec.solution_file).write_text(candidate, encoding="utf-8")
    try:
        build = subprocess.run(
            spec.build_cmd,
            shell=True,
            cwd=workspace,
            capture_output=True,
            text=True,
            timeout=handle.build_timeout_s,
        )
    except subprocess.TimeoutExpired:
        return _single_launch(reference_mean_ms, fallback_ms)
    if build.returncode != 0:
        return _single_launch(reference_mean_ms, fallback_ms)

    launches = []
    with gpu_lock(handle.gpu_lock_path):
        for _ in range(N_LAUNCHES):
            try:
                run = subprocess.run(
                    spec.test_cmd,
                    shell=True,
                    cwd=workspace,
                    capture_output=True,
                    text=True,
                    timeout=handle.test_timeout_s,
                )
            except subprocess.TimeoutExpired:
                continue
            if run.returncode == 0:
                value = parse_timing(spec, run.stdout)
                if value is not None:
                    launches.append(value)
    if not launches:
        raise MeasurementError(f"all {N_LAUNCHES} launches unparsable")
    return _measurement(launches, reference_mean_ms, fallback=False)
