"""A shipped synthetic corpus exercising the whole harness without a GPU.

Thirteen mock-backend tasks with scripted fixer response sets cover every
failure category, every stagnation signal, both sampling modes, the
asymmetric budget rule, a correct-but-slow candidate, CV flagging and the
single-launch fallback. Failing tasks are engineered to stop at exactly
iteration 5 (and passing ones at 1 or 5), so the two-phase call budget
N + (K-1)|F| is consumed exactly.

Expected trajectories below were derived by hand from the scripts before
the loop existed; tests compare harness output against these literals, not
against the harness itself.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backend import MOCK_SCRIPT_NAME
from .corpus import BrokenStart, TaskSpec, write_corpus
from .hashing import solution_hash

ALPHA = "scripted-alpha"
BETA = "scripted-beta"
FIXERS_FILE = "fixers.yaml"
EXPECTED_FILE = "expected.json"

TIMING_PATTERN = r"^Kernel time: ([0-9.]+) ms"

# Log fixtures; each matches exactly one pattern category.
_SYNTAX = "solution.cu(12): error: syntax error"
_IDENT = 'solution.cu(7): error: identifier "acc" is undefined'
_NO_MATCHING = 'solution.cu(31): error: no matching function for call to "dot(float4)"'
_NOT_DECLARED = "solution.cu(18): error: 'blockReduce' was not declared in this scope"
_PTXAS = "ptxas error   : Entry function '_Z6kernelPKfPfi' uses too much shared data"
_ARCH = "nvcc fatal   : Unsupported gpu architecture 'compute_120'"
_DRIVER = "CUDA driver version is insufficient for CUDA runtime version"
_OOM = "terminate called after throwing: cudaErrorMemoryAllocation: out of memory"
_ILLEGAL = "CUDA error: an illegal memory access was encountered (cudaErrorIllegalAddress)"
_FUNC_FULL = (
    "Verification FAILED on input (1024, 1024): outputs differ\n"
    "tolerance=1e-05\nmax abs error=0.5\nmean abs error=0.1\n"
    "sample mismatches=[(0, 0), (3, 7)]"
)
_FUNC_DIFF = "Verification FAILED on input (1024, 1024): outputs differ"
_GIBBERISH = "zxqv unrecognized gibberish"
_MISSING_FILE = "make: *** solution.cu: No such file or directory.  Stop."
_UNDEF_MAIN = (
    "/usr/bin/ld: /tmp/ccTmp.o: in function `_start': undefined reference to `main'"
)


def _rec(stage: str, exit_code: int = 0, stdout: str = "", stderr: str = "") -> dict:
    return {
        "stage": stage,
        "exit": exit_code,
        "stdout": stdout,
        "stderr": stderr,
        "wall_time_ms": 3.0,
    }


def _build_fail(stderr: str) -> list[dict]:
    return [_rec("build", 1, stderr=stderr)]


def _run_fail(stderr: str, stdout: str = "") -> list[dict]:
    return [_rec("build"), _rec("test", 1, stdout=stdout, stderr=stderr)]


def _run_pass(ms: float) -> list[dict]:
    return [_rec("build"), _rec("test", 0, stdout=f"Kernel time: {ms} ms")]


def _run_timeout() -> list[dict]:
    return [
        _rec("build"),
        {
            "stage": "test",
            "timed_out": True,
            "stdout": "",
            "stderr": "TEST TIMEOUT after 1 s (watchdog)",
            "wall_time_ms": 1000.0,
        },
    ]


@dataclass
class _Candidate:
    code: str
    records: list[dict] | None  # None: rejected at preflight, never executed
    perf: dict | None = None


@dataclass
class ScenarioScript:
    """One desk task: backend records, fixer responses, expected trajectory."""

    task_id: str
    stem: str
    curation_bucket: str
    broken_records: list[dict]
    error_log: str
    candidates: dict[str, list[_Candidate]]  # fixer -> per-iteration
    expected: dict[str, dict]  # fixer -> trajectory summary
    reference_mean_ms: float = 2.0
    anti_cheat: list[str] = field(default_factory=list)
    source_model: str = "manual"
    prompt: str = ""
    broken_kernel: str = ""


def _expect(stop, passed_at, categories, signatures, buckets) -> dict:
    return {
        "stop_reason": stop,
        "passed_at": passed_at,
        "categories": categories,
        "signatures": signatures,
        "buckets": buckets,
    }


def _kernel(stem: str, index: int, token: str, note: str) -> str:
    return (
        f"// candidate {index} for {stem} [{token}]\n"
        "__global__ void kernel(const float* in, float* out, int n) {\n"
        f"    // {note}\n"
        "    int i = blockIdx.x * blockDim.x + threadIdx.x;\n"
        "    if (i < n) out[i] = in[i] * 2.0f;\n"
        "}\n"
    )


def _response(code: str, prose: str = "Here is the revised kernel.") -> str:
    return f"{prose}\n\n```cuda\n{code}\n```\n"


def build_scenarios(seed: int = 0) -> list[ScenarioScript]:
    rng = random.Random(seed)
    token = f"seed{seed}:{rng.randrange(16**8):08x}"

    def kern(stem: str, index: int, note: str) -> str:
        return _kernel(stem, index, token, note)

    scenarios: list[ScenarioScript] = []

    def add(scenario: ScenarioScript) -> None:
        scenario.prompt = (
            f"Task {scenario.task_id}: repair the broken kernel so the shipped "
            "testbench passes without abandoning its optimized structure. Edit "
            "only solution.cu."
        )
        scenario.broken_kernel = (
            f"// broken start for {scenario.stem} [{token}]\n"
            "__global__ void kernel(const float* in, float* out, int n) {\n"
            "    /* injected fault */\n"
            "}\n"
        )
        scenarios.append(scenario)

    def shared(cands: list[_Candidate], expect: dict) -> tuple[dict, dict]:
        return {ALPHA: cands, BETA: list(cands)}, {ALPHA: dict(expect), BETA: dict(expect)}

    # desk/01: passes on the first attempt (speedup 2.0 at ref 2.0ms).
    c1 = _Candidate(kern("desk_01", 1, "straight fix"), _run_pass(1.0))
    cands, expected = shared(
        [c1], _expect("passed", 1, ["passed"], [""], ["passed"])
    )
    add(
        ScenarioScript(
            task_id="desk/01",
            stem="desk_01",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/02: alpha repairs at iteration 5 (debug_rate material); beta burns
    # five distinct build failures.
    alpha_cands = [
        _Candidate(kern("desk_02", 1, "attempt"), _build_fail(_SYNTAX)),
        _Candidate(kern("desk_02", 2, "rename"), _build_fail(_IDENT)),
        _Candidate(kern("desk_02", 3, "logic"), _run_fail(_FUNC_FULL)),
        _Candidate(kern("desk_02", 4, "closer"), _run_fail(_FUNC_DIFF)),
        _Candidate(kern("desk_02", 5, "fixed"), _run_pass(1.6)),
    ]
    beta_cands = [
        _Candidate(kern("desk_02", 11, "beta try"), _build_fail(_SYNTAX)),
        _Candidate(kern("desk_02", 12, "beta try"), _build_fail(_IDENT)),
        _Candidate(kern("desk_02", 13, "beta try"), _build_fail(_NO_MATCHING)),
        _Candidate(kern("desk_02", 14, "beta try"), _build_fail(_NOT_DECLARED)),
        _Candidate(kern("desk_02", 15, "beta try"), _build_fail(_PTXAS)),
    ]
    add(
        ScenarioScript(
            task_id="desk/02",
            stem="desk_02",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates={ALPHA: alpha_cands, BETA: beta_cands},
            expected={
                ALPHA: _expect(
                    "passed",
                    5,
                    [
                        "buildability",
                        "buildability",
                        "functional_correctness",
                        "functional_correctness",
                        "passed",
                    ],
                    ["syntax_error", "identifier_undefined", "tolerance", "outputs_differ", ""],
                    ["compile_error", "compile_error", "logic_error", "logic_error", "passed"],
                ),
                BETA: _expect(
                    "max_iterations",
                    None,
                    ["buildability"] * 5,
                    [
                        "syntax_error",
                        "identifier_undefined",
                        "no_matching_function",
                        "not_declared",
                        "ptxas_error",
                    ],
                    ["compile_error"] * 5,
                ),
            },
        )
    )

    # desk/03: verbatim resubmission at iteration 5 (duplicate_code); covers
    # out_of_memory and illegal_memory_access on the way.
    dup = _Candidate(kern("desk_03", 4, "same crash"), _run_fail(_ILLEGAL))
    cands, expected = shared(
        [
            _Candidate(kern("desk_03", 1, "a"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_03", 2, "b"), _build_fail(_IDENT)),
            _Candidate(kern("desk_03", 3, "c"), _run_fail(_OOM)),
            dup,
            _Candidate(dup.code, dup.records),
        ],
        _expect(
            "duplicate_code",
            None,
            ["buildability", "buildability", "out_of_memory", "illegal_memory_access", "illegal_memory_access"],
            ["syntax_error", "identifier_undefined", "oom", "illegal_access", "illegal_access"],
            ["compile_error", "compile_error", "memory_crash", "memory_crash", "memory_crash"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/03",
            stem="desk_03",
            curation_bucket="memory_crash",
            broken_records=_run_fail(_OOM),
            error_log=_OOM,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/04: iteration 5 retries the rejected first attempt (code_cycle);
    # covers environment_dependency.
    first = _Candidate(kern("desk_04", 1, "arch flag"), _build_fail(_ARCH))
    cands, expected = shared(
        [
            first,
            _Candidate(kern("desk_04", 2, "driver"), _build_fail(_DRIVER)),
            _Candidate(kern("desk_04", 3, "helper"), _build_fail(_NO_MATCHING)),
            _Candidate(kern("desk_04", 4, "scope"), _build_fail(_NOT_DECLARED)),
            _Candidate(first.code, first.records),
        ],
        _expect(
            "code_cycle",
            None,
            ["environment_dependency", "environment_dependency", "buildability", "buildability", "environment_dependency"],
            [
                "unsupported_gpu_arch",
                "driver_version_insufficient",
                "no_matching_function",
                "not_declared",
                "unsupported_gpu_arch",
            ],
            ["compile_error"] * 5,
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/04",
            stem="desk_04",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/05: three category transitions inside the window (oscillation).
    cands, expected = shared(
        [
            _Candidate(kern("desk_05", 1, "a"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_05", 2, "b"), _build_fail(_IDENT)),
            _Candidate(kern("desk_05", 3, "c"), _run_fail(_FUNC_FULL)),
            _Candidate(kern("desk_05", 4, "d"), _build_fail(_NO_MATCHING)),
            _Candidate(kern("desk_05", 5, "e"), _run_fail(_FUNC_DIFF)),
        ],
        _expect(
            "category_oscillation",
            None,
            [
                "buildability",
                "buildability",
                "functional_correctness",
                "buildability",
                "functional_correctness",
            ],
            ["syntax_error", "identifier_undefined", "tolerance", "no_matching_function", "outputs_differ"],
            ["compile_error", "compile_error", "logic_error", "compile_error", "logic_error"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/05",
            stem="desk_05",
            curation_bucket="logic_error",
            broken_records=_run_fail(_FUNC_FULL),
            error_log=_FUNC_FULL,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/06: three distinct candidates, identical (category, signature)
    # tuple three times in a row (no_progress).
    cands, expected = shared(
        [
            _Candidate(kern("desk_06", 1, "a"), _run_fail(_FUNC_FULL)),
            _Candidate(kern("desk_06", 2, "b"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_06", 3, "c"), _run_fail(_ILLEGAL)),
            _Candidate(kern("desk_06", 4, "d"), _run_fail(_ILLEGAL)),
            _Candidate(kern("desk_06", 5, "e"), _run_fail(_ILLEGAL)),
        ],
        _expect(
            "no_progress",
            None,
            [
                "functional_correctness",
                "buildability",
                "illegal_memory_access",
                "illegal_memory_access",
                "illegal_memory_access",
            ],
            ["tolerance", "syntax_error", "illegal_access", "illegal_access", "illegal_access"],
            ["logic_error", "compile_error", "memory_crash", "memory_crash", "memory_crash"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/06",
            stem="desk_06",
            curation_bucket="memory_crash",
            broken_records=_run_fail(_ILLEGAL),
            error_log=_ILLEGAL,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/07: five distinct failures, no signal (max_iterations).
    cands, expected = shared(
        [
            _Candidate(kern("desk_07", 1, "a"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_07", 2, "b"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_07", 3, "c"), _build_fail(_NO_MATCHING)),
            _Candidate(kern("desk_07", 4, "d"), _run_fail(_FUNC_FULL)),
            _Candidate(kern("desk_07", 5, "e"), _run_fail(_FUNC_DIFF)),
        ],
        _expect(
            "max_iterations",
            None,
            [
                "buildability",
                "buildability",
                "buildability",
                "functional_correctness",
                "functional_correctness",
            ],
            ["syntax_error", "syntax_error", "no_matching_function", "tolerance", "outputs_differ"],
            ["compile_error", "compile_error", "compile_error", "logic_error", "logic_error"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/07",
            stem="desk_07",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates=cands,
            expected=expected,
        )
    )

    # desk/08: timeout category plus a compile-stage fallthrough (empty
    # signature) on iteration 2.
    cands, expected = shared(
        [
            _Candidate(kern("desk_08", 1, "slow"), _run_timeout()),
            _Candidate(kern("desk_08", 2, "odd"), _build_fail(_GIBBERISH)),
            _Candidate(kern("desk_08", 3, "shmem"), _build_fail(_PTXAS)),
            _Candidate(kern("desk_08", 4, "call"), _build_fail(_NO_MATCHING)),
            _Candidate(kern("desk_08", 5, "close"), _run_fail(_FUNC_FULL)),
        ],
        _expect(
            "max_iterations",
            None,
            ["timeout", "buildability", "buildability", "buildability", "functional_correctness"],
            ["timeout", "", "ptxas_error", "no_matching_function", "tolerance"],
            ["timeout", "compile_error", "compile_error", "compile_error", "logic_error"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/08",
            stem="desk_08",
            curation_bucket="timeout",
            broken_records=_run_timeout(),
            error_log="TEST TIMEOUT after 1 s (watchdog)",
            candidates=cands,
            expected=expected,
        )
    )

    # desk/09: repair by degeneration. Correct-but-slow candidates pass
    # correctness at 0.5x and miss the 0.7 gate; correctness-only scoring
    # (p=0) credits iteration 1.
    cands, expected = shared(
        [
            _Candidate(kern("desk_09", 1, "serial fallback"), _run_pass(4.0)),
            _Candidate(kern("desk_09", 2, "still serial"), _run_pass(4.2)),
            _Candidate(kern("desk_09", 3, "retry"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_09", 4, "retry 2"), _build_fail(_IDENT)),
            _Candidate(kern("desk_09", 5, "fallback again"), _run_pass(4.4)),
        ],
        _expect(
            "max_iterations",
            None,
            ["passed", "passed", "buildability", "buildability", "passed"],
            ["", "", "syntax_error", "identifier_undefined", ""],
            ["perf_broken", "perf_broken", "compile_error", "compile_error", "perf_broken"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/09",
            stem="desk_09",
            curation_bucket="perf_broken",
            broken_records=_run_pass(4.0),
            error_log=(
                "Verification PASSED\nKernel time: 4.0 ms\n"
                "performance below reference baseline (0.50x < 0.70x)"
            ),
            candidates=cands,
            expected=expected,
        )
    )

    # desk/10: the broken start came from scripted-alpha; passing only at
    # iteration 5 scores zero under the asymmetric rule for alpha but one
    # for beta.
    cands, expected = shared(
        [
            _Candidate(kern("desk_10", 1, "a"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_10", 2, "b"), _build_fail(_IDENT)),
            _Candidate(kern("desk_10", 3, "c"), _run_fail(_FUNC_FULL)),
            _Candidate(kern("desk_10", 4, "d"), _run_fail(_FUNC_DIFF)),
            _Candidate(kern("desk_10", 5, "e"), _run_pass(1.2)),
        ],
        _expect(
            "passed",
            5,
            [
                "buildability",
                "buildability",
                "functional_correctness",
                "functional_correctness",
                "passed",
            ],
            ["syntax_error", "identifier_undefined", "tolerance", "outputs_differ", ""],
            ["compile_error", "compile_error", "logic_error", "logic_error", "passed"],
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/10",
            stem="desk_10",
            curation_bucket="logic_error",
            broken_records=_run_fail(_FUNC_FULL),
            error_log=_FUNC_FULL,
            candidates=cands,
            expected=expected,
            source_model=ALPHA,
        )
    )

    # desk/11: anti-cheat rejection at preflight, then harness-contract
    # integration failures.
    cheat_code = (
        f"// candidate 1 for desk_11 [{token}]\n"
        "void solve(cublasHandle_t handle, float* a, float* b) {\n"
        "    cublasSgemm(handle, a, b);\n"
        "}\n"
    )
    cands, expected = shared(
        [
            _Candidate(cheat_code, None),
            _Candidate(kern("desk_11", 2, "moved file"), _build_fail(_MISSING_FILE)),
            _Candidate(kern("desk_11", 3, "no main"), _build_fail(_UNDEF_MAIN)),
            _Candidate(kern("desk_11", 4, "own kernel"), _build_fail(_SYNTAX)),
            _Candidate(kern("desk_11", 5, "own kernel 2"), _build_fail(_IDENT)),
        ],
        _expect(
            "max_iterations",
            None,
            ["integration", "integration", "integration", "buildability", "buildability"],
            [
                "anti_cheat",
                "missing_solution_file",
                "undefined_reference_main",
                "syntax_error",
                "identifier_undefined",
            ],
            ["compile_error"] * 5,
        ),
    )
    add(
        ScenarioScript(
            task_id="desk/11",
            stem="desk_11",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates=cands,
            expected=expected,
            anti_cheat=["cublasSgemm", "cusolverDnSgetrf"],
        )
    )

    # desk/12: passes at once but with noisy re-launch timings; CV = 0.3/1.1
    # exceeds the 3% flag threshold (reported, not enforced).
    noisy = _Candidate(
        kern("desk_12", 1, "fast but jittery"),
        _run_pass(1.0),
        perf={
            "launch_stdouts": ["Kernel time: 1.0 ms"] * 9 + ["Kernel time: 2.0 ms"]
        },
    )
    cands, expected = shared(
        [noisy], _expect("passed", 1, ["passed"], [""], ["passed"])
    )
    add(
        ScenarioScript(
            task_id="desk/12",
            stem="desk_12",
            curation_bucket="logic_error",
            broken_records=_run_fail(_FUNC_DIFF),
            error_log=_FUNC_DIFF,
            candidates=cands,
            expected=expected,
            reference_mean_ms=2.2,
        )
    )

    # desk/13: the perf-mode rebuild fails, so measurement falls back to the
    # single harness-run timing (cv absent). Beta never solves it.
    fallback = _Candidate(
        kern("desk_13", 1, "fixed"), _run_pass(1.0), perf={"build_fail": True}
    )
    add(
        ScenarioScript(
            task_id="desk/13",
            stem="desk_13",
            curation_bucket="compile_error",
            broken_records=_build_fail(_SYNTAX),
            error_log=_SYNTAX,
            candidates={
                ALPHA: [fallback],
                BETA: [
                    _Candidate(kern("desk_13", 11, "beta a"), _build_fail(_SYNTAX)),
                    _Candidate(kern("desk_13", 12, "beta b"), _build_fail(_IDENT)),
                    _Candidate(kern("desk_13", 13, "beta c"), _run_fail(_FUNC_FULL)),
                    _Candidate(kern("desk_13", 14, "beta d"), _run_fail(_FUNC_DIFF)),
                    _Candidate(kern("desk_13", 15, "beta e"), _build_fail(_NO_MATCHING)),
                ],
            },
            expected={
                ALPHA: _expect("passed", 1, ["passed"], [""], ["passed"]),
                BETA: _expect(
                    "max_iterations",
                    None,
                    [
                        "buildability",
                        "buildability",
                        "functional_correctness",
                        "functional_correctness",
                        "buildability",
                    ],
                    [
                        "syntax_error",
                        "identifier_undefined",
                        "tolerance",
                        "outputs_differ",
                        "no_matching_function",
                    ],
                    ["compile_error", "compile_error", "logic_error", "logic_error", "compile_error"],
                ),
            },
        )
    )

    return scenarios


def _mock_script(scenario: ScenarioScript) -> dict:
    by_hash: dict[str, list[dict]] = {
        solution_hash(scenario.broken_kernel): scenario.broken_records
    }
    perf: dict[str, dict] = {}
    for cands in scenario.candidates.values():
        for cand in cands:
            if cand.records is not None:
                by_hash[solution_hash(cand.code)] = cand.records
            if cand.perf is not None:
                perf[solution_hash(cand.code)] = cand.perf
    script: dict = {
        "by_hash": by_hash,
        "default": _build_fail("error: unexpected candidate (no scripted record)"),
    }
    if perf:
        script["perf"] = perf
    return script


def generate_desk_corpus(seed: int = 0, dest: str | Path = "desk-corpus") -> Path:
    """Write the synthetic corpus, response sets, fixer configs and expected
    trajectories under dest. Byte-deterministic for a given seed."""
    dest = Path(dest)
    scenarios = build_scenarios(seed)

    tasks = []
    for s in scenarios:
        spec = TaskSpec(
            task_id=s.task_id,
            source="desk",
            backend="mock",
            solution_file="solution.cu",
            build_cmd="mock://build",
            test_cmd="mock://test",
            min_sm=0,
            requires=[],
            anti_cheat=list(s.anti_cheat),
            timing_parser=TIMING_PATTERN,
            source_model=s.source_model,
            reference_mean_ms=s.reference_mean_ms,
            curation_bucket=s.curation_bucket,
            stem=s.stem,
        )
        broken = BrokenStart(
            prompt=s.prompt,
            broken_kernel=s.broken_kernel,
            error_log=s.error_log,
            native_harness=dest / "testbench" / s.stem,
        )
        tasks.append((spec, broken))

    write_corpus(
        dest,
        tasks,
        corpus_id=f"desk-v1-seed{seed}",
        extra_meta={"seed": seed, "generator": "fixerbench.desk_corpus"},
    )

    expected: dict[str, dict[str, dict]] = {ALPHA: {}, BETA: {}}
    for s in scenarios:
        script = _mock_script(s)
        (dest / "testbench" / s.stem / MOCK_SCRIPT_NAME).write_text(
            json.dumps(script, indent=2, sort_keys=True) + "\n"
        )
        for fixer_name, cands in s.candidates.items():
            response_dir = dest / "responses" / fixer_name / s.stem
            response_dir.mkdir(parents=True, exist_ok=True)
            for i, cand in enumerate(cands, start=1):
                prose = "Here is the revised kernel."
                if s.task_id == "desk/02" and i == len(cands):
                    # Two fenced blocks: the extractor must take the last.
                    body = (
                        "The original kernel was:\n\n```cuda\n"
                        + s.broken_kernel
                        + "\n```\n\nAfter the fix:\n\n```cuda\n"
                        + cand.code
                        + "\n```\n"
                    )
                    (response_dir / f"iter_{i}.txt").write_text(body)
                    continue
                (response_dir / f"iter_{i}.txt").write_text(_response(cand.code, prose))
        for fixer_name, summary in s.expected.items():
            expected[fixer_name][s.task_id] = summary

    (dest / EXPECTED_FILE).write_text(
        json.dumps(expected, indent=2, sort_keys=True) + "\n"
    )
    fixers_doc = {
        "fixers": [
            {
                "name": ALPHA,
                "kind": "scripted",
                "endpoint": f"responses/{ALPHA}",
                "is_source_model": True,
            },
            {
                "name": BETA,
                "kind": "scripted",
                "endpoint": f"responses/{BETA}",
                "is_source_model": False,
            },
        ]
    }
    (dest / FIXERS_FILE).write_text(yaml.safe_dump(fixers_doc, sort_keys=True))
    return dest


def load_expected(corpus_root: str | Path) -> dict[str, dict[str, dict]]:
    return json.loads((Path(corpus_root) / EXPECTED_FILE).read_text())
