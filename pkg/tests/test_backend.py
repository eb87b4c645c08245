from __future__ import annotations

import json
import threading
from pathlib import Path

import pytest

from fixerbench.backend import (
    MOCK_SCRIPT_NAME,
    BackendHandle,
    execute_candidate,
    normalize_backend_kind,
    parse_timing,
    preflight,
)
from fixerbench.classifier import Category, classify_iteration
from fixerbench.corpus import TaskSpec
from fixerbench.errors import ConfigurationError
from fixerbench.hashing import solution_hash


def shell_spec(tmp_path, build_cmd=":", test_cmd=":", **kw) -> tuple[TaskSpec, Path]:
    spec = TaskSpec(
        task_id="sh/1",
        backend="nvcc",
        solution_file="solution.cu",
        build_cmd=build_cmd,
        test_cmd=test_cmd,
        timing_parser=r"^Kernel time: ([0-9.]+) ms",
        **kw,
    )
    bench = tmp_path / "bench"
    bench.mkdir(exist_ok=True)
    (bench / "solution.cu").write_text("// broken\n")
    return spec, bench


def test_preflight_anti_cheat_names_the_substring(tmp_path):
    spec, bench = shell_spec(tmp_path, anti_cheat=["cublasSgemm", "cusolverDnSgetrf"])
    outcome = preflight(spec, "x = cublasSgemm(h, a, b);", workspace=bench)
    assert outcome.failed and outcome.stage == "preflight"
    assert "cublasSgemm" in outcome.stderr
    assert classify_iteration([outcome]).category is Category.INTEGRATION


def test_preflight_substring_match_is_literal_and_position_independent(tmp_path):
    spec, bench = shell_spec(tmp_path, anti_cheat=["cusolverDnSgetrf"])
    candidate = "// comment mentioning cusolverDnSgetrf only\nint main() {}\n"
    assert preflight(spec, candidate, workspace=bench).failed


def test_preflight_empty_anti_cheat_passes(tmp_path):
    spec, bench = shell_spec(tmp_path)
    assert not preflight(spec, "anything at all", workspace=bench).failed


def test_preflight_missing_solution_file(tmp_path):
    spec, bench = shell_spec(tmp_path)
    (bench / "solution.cu").unlink()
    outcome = preflight(spec, "fine", workspace=bench)
    assert outcome.failed
    assert "No such file" in outcome.stderr
    assert classify_iteration([outcome]).category is Category.INTEGRATION


def test_execute_build_then_test_pass(tmp_path):
    spec, bench = shell_spec(
        tmp_path, build_cmd=":", test_cmd='echo "Kernel time: 1.25 ms"'
    )
    handle = BackendHandle(kind="nvcc", workdir=tmp_path / "work")
    outcomes = execute_candidate(handle, spec, "// fixed\n", bench)
    assert [o.stage for o in outcomes] == ["build", "run"]
    assert not outcomes[-1].failed
    assert parse_timing(spec, outcomes[-1].stdout) == 1.25


def test_execute_stops_at_failing_build(tmp_path):
    spec, bench = shell_spec(tmp_path, build_cmd='echo "syntax error" >&2; exit 1')
    handle = BackendHandle(kind="nvcc", workdir=tmp_path / "work")
    outcomes = execute_candidate(handle, spec, "// nope\n", bench)
    assert len(outcomes) == 1
    assert outcomes[0].stage == "build" and outcomes[0].failed
    assert "syntax error" in outcomes[0].stderr


def test_execute_command_not_found_is_build_failure(tmp_path):
    spec, bench = shell_spec(tmp_path, build_cmd="definitely-not-a-command-xyz")
    handle = BackendHandle(kind="nvcc", workdir=tmp_path / "work")
    outcomes = execute_candidate(handle, spec, "// x\n", bench)
    assert outcomes[0].stage == "build" and outcomes[0].failed
    assert outcomes[0].stderr


def test_test_timeout_sets_marker_and_budget(tmp_path):
    spec, bench = shell_spec(tmp_path, test_cmd="sleep 5")
    handle = BackendHandle(kind="nvcc", workdir=tmp_path / "work", test_timeout_s=1)
    outcomes = execute_candidate(handle, spec, "// x\n", bench)
    last = outcomes[-1]
    assert last.stage == "run" and last.timed_out and last.exit_status is None
    assert "TEST TIMEOUT" in last.stderr
    assert last.wall_time_ms >= 1000.0
    assert classify_iteration(outcomes).category is Category.TIMEOUT


def test_sandbox_isolation(tmp_path):
    spec, bench = shell_spec(tmp_path, test_cmd="touch marker")
    handle = BackendHandle(kind="nvcc", workdir=tmp_path / "work")
    execute_candidate(handle, spec, "// a\n", bench)
    execute_candidate(handle, spec, "// b\n", bench)
    assert not (bench / "marker").exists()  # originals never mutated
    assert (bench / "solution.cu").read_text() == "// broken\n"
    workspaces = list((tmp_path / "work").iterdir())
    assert len(workspaces) == 2  # one fresh copy per execution


def test_gpu_lock_serializes_command_phases(tmp_path):
    counter = tmp_path / "counter"
    counter.write_text("0")
    spec, bench = shell_spec(
        tmp_path,
        test_cmd=f'c=$(cat {counter}); sleep 0.05; echo $((c+1)) > {counter}',
    )
    handle = BackendHandle(
        kind="nvcc",
        workdir=tmp_path / "work",
        gpu_lock_path=tmp_path / "gpu.lock",
    )
    threads = [
        threading.Thread(
            target=lambda: execute_candidate(handle, spec, "// x\n", bench)
        )
        for _ in range(4)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.read_text().strip() == "4"


def test_invalid_timeouts_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        BackendHandle(kind="nvcc", workdir=tmp_path, build_timeout_s=0)


def test_backend_kind_aliases():
    assert normalize_backend_kind("raw-compiler") == "nvcc"
    assert normalize_backend_kind("project-makefile") == "make"
    assert normalize_backend_kind("kb-harness") == "kb"
    with pytest.raises(ConfigurationError):
        normalize_backend_kind("quantum")


# -- mock backend -----------------------------------------------------------


def write_mock_script(bench: Path, by_hash: dict, default=None, perf=None) -> None:
    doc = {"by_hash": by_hash}
    if default is not None:
        doc["default"] = default
    if perf is not None:
        doc["perf"] = perf
    bench.mkdir(parents=True, exist_ok=True)
    (bench / MOCK_SCRIPT_NAME).write_text(json.dumps(doc))


def test_mock_replays_scripted_records(tmp_path):
    candidate = "// candidate\n"
    bench = tmp_path / "bench"
    write_mock_script(
        bench,
        {
            solution_hash(candidate): [
                {"stage": "build", "exit": 0},
                {"stage": "test", "exit": 0, "stdout": "Kernel time: 1.25 ms"},
            ]
        },
    )
    spec = TaskSpec(task_id="m/1", backend="mock", timing_parser=r"^Kernel time: ([0-9.]+) ms")
    handle = BackendHandle(kind="mock", workdir=tmp_path / "work")
    outcomes = execute_candidate(handle, spec, candidate, bench)
    assert [o.stage for o in outcomes] == ["build", "test"]
    assert outcomes[-1].stage == "test" and not outcomes[-1].failed
    assert classify_iteration(outcomes).category is Category.PASSED


def test_mock_determinism(tmp_path):
    candidate = "// same\n"
    bench = tmp_path / "bench"
    write_mock_script(
        bench,
        {solution_hash(candidate): [{"stage": "build", "exit": 1, "stderr": "error: syntax error"}]},
    )
    spec = TaskSpec(task_id="m/2", backend="mock")
    handle = BackendHandle(kind="mock", workdir=tmp_path / "work")
    first = execute_candidate(handle, spec, candidate, bench)
    second = execute_candidate(handle, spec, candidate, bench)
    assert first == second


def test_mock_default_record_and_stop_at_failure(tmp_path):
    bench = tmp_path / "bench"
    write_mock_script(
        bench,
        {},
        default=[
            {"stage": "build", "exit": 1, "stderr": "error: syntax error"},
            {"stage": "test", "exit": 0},
        ],
    )
    spec = TaskSpec(task_id="m/3", backend="mock")
    handle = BackendHandle(kind="mock", workdir=tmp_path / "work")
    outcomes = execute_candidate(handle, spec, "// unknown\n", bench)
    assert len(outcomes) == 1 and outcomes[0].failed  # stops at first failing stage


def test_mock_timeout_record_gets_marker_and_budget(tmp_path):
    candidate = "// slow\n"
    bench = tmp_path / "bench"
    write_mock_script(
        bench,
        {
            solution_hash(candidate): [
                {"stage": "build", "exit": 0},
                {"stage": "test", "timed_out": True, "wall_time_ms": 5.0},
            ]
        },
    )
    spec = TaskSpec(task_id="m/4", backend="mock")
    handle = BackendHandle(kind="mock", workdir=tmp_path / "work", test_timeout_s=2)
    outcomes = execute_candidate(handle, spec, candidate, bench)
    last = outcomes[-1]
    assert last.timed_out and "TIMEOUT" in last.stderr
    assert last.wall_time_ms >= 2000.0


def test_mock_ignores_gpu_lock(tmp_path):
    handle = BackendHandle(
        kind="mock", workdir=tmp_path, gpu_lock_path=tmp_path / "lock"
    )
    assert handle.gpu_lock_path is None


# -- timing parser ----------------------------------------------------------


def test_parse_timing_first_match_wins():
    spec = TaskSpec(task_id="t/1", timing_parser=r"^Kernel time: ([0-9.]+) ms")
    stdout = "Kernel time: 2.0 ms\nKernel time: 3.0 ms\n"
    assert parse_timing(spec, stdout) == 2.0


def test_parse_timing_absent():
    spec = TaskSpec(task_id="t/2", timing_parser=r"^Kernel time: ([0-9.]+) ms")
    assert parse_timing(spec, "no timing here\n") is None


def test_parse_timing_paper_pattern():
    spec = TaskSpec(task_id="t/3", timing_parser=r"^Kernel time: ([0-9.]+) ms")
    assert parse_timing(spec, "Kernel time: 1.25 ms") == 1.25


def test_parse_timing_requires_one_group():
    spec = TaskSpec(task_id="t/4", timing_parser=r"^Kernel time: ([0-9.]+) (ms)")
    with pytest.raises(ConfigurationError):
        parse_timing(spec, "Kernel time: 1.25 ms")
