from __future__ import annotations

import tempfile
from pathlib import Path

import pytest

from fixerbench.backend import BackendHandle
from fixerbench.classifier import Bucket, Category
from fixerbench.cli import load_fixer_configs
from fixerbench.corpus import LoadedCorpus, load_corpus
from fixerbench.desk_corpus import FIXERS_FILE, generate_desk_corpus
from fixerbench.fixer import FixerClient, FixerConfig
from fixerbench.loop import ProtocolConfig, run_phase_schedule
from fixerbench.metrics import IterationSummary, TaskOutcome


@pytest.fixture(scope="session")
def desk_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("desk") / "corpus"
    generate_desk_corpus(0, root)
    return root


@pytest.fixture(scope="session")
def desk_corpus(desk_root) -> LoadedCorpus:
    corpus = load_corpus(desk_root)
    assert not corpus.errors
    return corpus


@pytest.fixture(scope="session")
def desk_fixers(desk_root) -> list[FixerConfig]:
    return load_fixer_configs(desk_root / FIXERS_FILE)


def mock_handle_factory():
    workdir = Path(tempfile.mkdtemp(prefix="fixerbench-mock-"))

    def factory(spec, broken) -> BackendHandle:
        return BackendHandle(kind="mock", workdir=workdir)

    return factory


@pytest.fixture()
def mock_factory():
    return mock_handle_factory()


@pytest.fixture(scope="session")
def desk_run(desk_corpus, desk_fixers):
    """Default-protocol two-phase run of both scripted fixers."""
    cfg = ProtocolConfig()
    factory = mock_handle_factory()
    trajectories = {}
    call_reports = {}
    for fixer_cfg in desk_fixers:
        client = FixerClient(fixer_cfg)
        trajs, calls = run_phase_schedule(cfg, client, desk_corpus.tasks, factory)
        trajectories[fixer_cfg.name] = trajs
        call_reports[fixer_cfg.name] = calls
    return {
        "cfg": cfg,
        "trajectories": trajectories,
        "call_reports": call_reports,
    }


def make_outcome(
    task_id: str,
    iterations: list[tuple],
    stop_reason: str,
    *,
    fixer_name: str = "m",
    source_model: str = "manual",
    bucket: Bucket | None = None,
) -> TaskOutcome:
    """Synthetic TaskOutcome from per-iteration tuples.

    Each tuple is (category, signature, hash, speedup) where speedup None
    means the iteration failed correctness; gate decisions replay p=0.7.
    """
    summaries = []
    for category, signature, candidate_hash, speedup in iterations:
        category = Category(category)
        passed = category is Category.PASSED
        gate = (speedup is not None and speedup >= 0.7) if passed else None
        if passed:
            b = Bucket.PASSED if gate else Bucket.PERF_BROKEN
        elif category in (Category.OUT_OF_MEMORY, Category.ILLEGAL_MEMORY_ACCESS):
            b = Bucket.MEMORY_CRASH
        elif category is Category.TIMEOUT:
            b = Bucket.TIMEOUT
        elif category is Category.FUNCTIONAL_CORRECTNESS:
            b = Bucket.LOGIC_ERROR
        else:
            b = Bucket.COMPILE_ERROR
        summaries.append(
            IterationSummary(
                category=category,
                signature=signature,
                candidate_hash=candidate_hash,
                passed_correctness=passed,
                speedup=speedup,
                gate_passed=gate,
                bucket=b,
            )
        )
    return TaskOutcome(
        task_id=task_id,
        fixer_name=fixer_name,
        stop_reason=stop_reason,
        iterations=summaries,
        initial_bucket=bucket,
        source_model=source_model,
    )
