from __future__ import annotations

import json
import random

import pytest

import fixerbench.corpus as corpus_mod
from fixerbench.backend import BackendHandle, ExecutionOutcome
from fixerbench.corpus import (
    BrokenStart,
    TaskSpec,
    induce_tiers,
    load_corpus,
    validate_task,
    write_corpus,
)
from fixerbench.errors import ConfigurationError

from conftest import make_outcome

# The metadata contract as it appears in a released manifest.
MANIFEST_EXAMPLE = {
    "task_id": "CUDA/10",
    "source": "cuda_samples",
    "backend": "nvcc",
    "solution_file": "solution.cu",
    "build_cmd": "nvcc -O2 -arch=sm_80 -o test test_main.cu solution.cu",
    "test_cmd": "./test",
    "min_sm": 80,
    "requires": [],
    "anti_cheat": ["cublasSgemm", "cusolverDnSgetrf"],
    "timing_parser": "^Kernel time: ([0-9.]+) ms",
}


def test_manifest_contract_parses():
    spec = TaskSpec.from_manifest(MANIFEST_EXAMPLE, stem="CUDA_10")
    assert spec.build_cmd == "nvcc -O2 -arch=sm_80 -o test test_main.cu solution.cu"
    assert spec.task_id == "CUDA/10"
    assert spec.min_sm == 80
    assert spec.anti_cheat == ["cublasSgemm", "cusolverDnSgetrf"]
    assert spec.problems() == []


def test_unknown_manifest_fields_preserved():
    doc = dict(MANIFEST_EXAMPLE, future_field={"nested": [1, 2]})
    spec = TaskSpec.from_manifest(doc, stem="CUDA_10")
    assert spec.extras == {"future_field": {"nested": [1, 2]}}
    assert spec.to_manifest()["future_field"] == {"nested": [1, 2]}


def test_empty_root_loads_empty(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    loaded = load_corpus(root)
    assert loaded.tasks == [] and loaded.errors == []


def test_desk_corpus_loads_sorted(desk_corpus):
    ids = [spec.task_id for spec in desk_corpus.specs()]
    assert len(ids) == 13
    assert ids == sorted(ids)


def test_malformed_field_collected_not_fatal(tmp_path, desk_root):
    import shutil

    root = tmp_path / "corpus"
    shutil.copytree(desk_root, root)
    bad = json.loads((root / "input" / "desk_01.json").read_text())
    bad["timing_parser"] = "^Kernel time: ([0-9.]+) (ms)"  # two capture groups
    (root / "input" / "desk_01.json").write_text(json.dumps(bad))
    loaded = load_corpus(root)
    assert len(loaded.tasks) == 12
    assert any(e.field == "timing_parser" and e.stem == "desk_01" for e in loaded.errors)


def test_missing_manifest_collected(tmp_path, desk_root):
    import shutil

    root = tmp_path / "corpus"
    shutil.copytree(desk_root, root)
    (root / "input" / "desk_02.json").unlink()
    loaded = load_corpus(root)
    assert len(loaded.tasks) == 12
    assert any(e.stem == "desk_02" and e.field == "manifest" for e in loaded.errors)


def test_roundtrip_identity_on_schema_fields(tmp_path, desk_corpus):
    dest = tmp_path / "copy"
    write_corpus(dest, desk_corpus.tasks, corpus_id=desk_corpus.corpus_id)
    reloaded = load_corpus(dest)
    assert not reloaded.errors
    original = {s.task_id: s.to_manifest() for s in desk_corpus.specs()}
    copied = {s.task_id: s.to_manifest() for s in reloaded.specs()}
    assert original == copied
    for (spec_a, broken_a), (spec_b, broken_b) in zip(desk_corpus.tasks, reloaded.tasks):
        assert broken_a.prompt == broken_b.prompt
        assert broken_a.broken_kernel == broken_b.broken_kernel
        assert broken_a.error_log == broken_b.error_log


def test_fingerprint_tracks_content(tmp_path, desk_corpus):
    dest = tmp_path / "copy"
    write_corpus(dest, desk_corpus.tasks, corpus_id=desk_corpus.corpus_id)
    assert load_corpus(dest).fingerprint() == desk_corpus.fingerprint()


# -- validate_task ----------------------------------------------------------


def _mk_spec(tmp_path):
    spec = TaskSpec(task_id="v/1", backend="mock", timing_parser=r"^Kernel time: ([0-9.]+) ms")
    broken = BrokenStart(
        prompt="p", broken_kernel="// broken\n", error_log="e", native_harness=tmp_path
    )
    return spec, broken


def _outcome(stderr="", exit_code=1, stdout=""):
    return ExecutionOutcome(
        stage="build", exit_status=exit_code, stdout=stdout, stderr=stderr, wall_time_ms=1.0
    )


def test_validate_reproducible(monkeypatch, tmp_path):
    spec, broken = _mk_spec(tmp_path)
    monkeypatch.setattr(
        corpus_mod,
        "execute_candidate",
        lambda *a, **k: [_outcome("error: syntax error")],
    )
    handle = BackendHandle(kind="mock", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle)
    assert verdict.reproducible
    assert verdict.categories == ["buildability", "buildability"]


def test_validate_passing_broken_start(monkeypatch, tmp_path):
    spec, broken = _mk_spec(tmp_path)
    monkeypatch.setattr(
        corpus_mod, "execute_candidate", lambda *a, **k: [_outcome(exit_code=0)]
    )
    handle = BackendHandle(kind="mock", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle, gate_p=0.0)
    assert not verdict.reproducible
    assert verdict.reason == "broken start passes"


def test_validate_divergent_categories(monkeypatch, tmp_path):
    spec, broken = _mk_spec(tmp_path)
    crash = ExecutionOutcome(
        stage="run",
        exit_status=1,
        stdout="",
        stderr="cudaErrorIllegalAddress",
        wall_time_ms=1.0,
    )
    responses = iter(
        [[_outcome("error: syntax error")], [_outcome(exit_code=0), crash]]
    )
    monkeypatch.setattr(
        corpus_mod, "execute_candidate", lambda *a, **k: next(responses)
    )
    handle = BackendHandle(kind="mock", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle)
    assert not verdict.reproducible
    assert len(verdict.categories) == 2
    assert verdict.categories[0] != verdict.categories[1]


def test_validate_backend_unavailable(tmp_path):
    spec, broken = _mk_spec(tmp_path)  # no mock script on disk
    handle = BackendHandle(kind="mock", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle)
    assert verdict.unverifiable and not verdict.reproducible


def test_validate_backend_mismatch(tmp_path):
    spec, broken = _mk_spec(tmp_path)
    handle = BackendHandle(kind="nvcc", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle)
    assert verdict.unverifiable


def test_validate_perf_broken_start(monkeypatch, tmp_path):
    spec, broken = _mk_spec(tmp_path)
    spec.reference_mean_ms = 2.0
    monkeypatch.setattr(
        corpus_mod,
        "execute_candidate",
        lambda *a, **k: [
            ExecutionOutcome(
                stage="test",
                exit_status=0,
                stdout="Kernel time: 4.0 ms",
                stderr="",
                wall_time_ms=1.0,
            )
        ],
    )
    handle = BackendHandle(kind="mock", workdir=tmp_path)
    verdict = validate_task(spec, broken, handle, gate_p=0.7)
    assert verdict.reproducible
    assert verdict.categories == ["perf_broken", "perf_broken"]


# -- tier induction ---------------------------------------------------------

PANEL6 = [f"m{i}" for i in range(6)]


def _panel_outcomes(passes: dict[str, dict[str, int | None]]):
    """passes: task -> fixer -> passed_at (None: unsolved)."""
    outcomes = []
    for task_id, by_fixer in passes.items():
        for fixer, passed_at in by_fixer.items():
            if passed_at is None:
                iters = [("buildability", "syntax_error", f"h{task_id}{fixer}", None)]
                outcomes.append(
                    make_outcome(task_id, iters, "max_iterations", fixer_name=fixer)
                )
            else:
                iters = [
                    ("buildability", "syntax_error", f"h{task_id}{fixer}{i}", None)
                    for i in range(passed_at - 1)
                ] + [("passed", "", f"hp{task_id}{fixer}", 1.0)]
                outcomes.append(
                    make_outcome(task_id, iters, "passed", fixer_name=fixer)
                )
    return outcomes


def test_tier_rules_on_six_fixer_panel():
    passes = {
        "t/l1": {f: 1 for f in PANEL6},  # all at iteration 1
        "t/l2": {f: 3 for f in PANEL6},  # all solve, mean > 2
        "t/l3": {f: (2 if i < 4 else None) for i, f in enumerate(PANEL6)},
        "t/l4": {f: (2 if i < 2 else None) for i, f in enumerate(PANEL6)},
        "t/l5": {f: None for f in PANEL6},
    }
    induction = induce_tiers(_panel_outcomes(passes), PANEL6)
    tiers = {t: d.tier for t, d in induction.tiers.items()}
    assert tiers == {"t/l1": "L1", "t/l2": "L2", "t/l3": "L3", "t/l4": "L4", "t/l5": "L5"}
    assert induction.tiers["t/l5"].solver_count == 0
    assert induction.tiers["t/l5"].mean_iterations is None
    assert induction.tiers["t/l1"].mean_iterations == 1.0


def test_tier_partition_total_and_exclusive():
    rng = random.Random(7)
    passes = {
        f"t/{i}": {f: (rng.choice([None, 1, 2, 3, 4, 5])) for f in PANEL6}
        for i in range(40)
    }
    induction = induce_tiers(_panel_outcomes(passes), PANEL6)
    assert set(induction.tiers) == set(passes)
    assert all(d.tier in ("L1", "L2", "L3", "L4", "L5") for d in induction.tiers.values())


def test_partial_coverage_excluded():
    passes = {"t/full": {f: 1 for f in PANEL6}, "t/partial": {"m0": 1}}
    induction = induce_tiers(_panel_outcomes(passes), PANEL6)
    assert "t/partial" in induction.excluded
    assert "t/partial" not in induction.tiers


def test_empty_panel_rejected():
    with pytest.raises(ConfigurationError, match="panel required"):
        induce_tiers([], [])


def test_l5_slice_scores_zero_for_every_panel_member():
    passes = {
        "t/a": {f: None for f in PANEL6},
        "t/b": {f: None for f in PANEL6},
        "t/c": {f: 1 for f in PANEL6},
    }
    outcomes = _panel_outcomes(passes)
    induction = induce_tiers(outcomes, PANEL6)
    l5 = set(induction.slice("L5"))
    assert l5 == {"t/a", "t/b"}
    for fixer in PANEL6:
        slice_outcomes = [
            o for o in outcomes if o.fixer_name == fixer and o.task_id in l5
        ]
        assert all(o.passed_at is None for o in slice_outcomes)
