"""Task manifests, broken-start workspaces, and difficulty-tier induction.

Corpus layout (one stem per task):

    <root>/corpus_meta.json          optional {"corpus_id": ...}
    <root>/input/<stem>.json         task manifest
    <root>/prompts/<stem>.txt        task description
    <root>/testbench/<stem>/         opaque harness subtree, containing the
                                     broken editable file (at solution_file)
                                     and error.log with the recorded failure

Unknown manifest fields are preserved verbatim as extras so future schema
growth does not break old corpora.
"""

from __future__ import annotations

import hashlib
import json
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .backend import (
    BackendHandle,
    execute_candidate,
    normalize_backend_kind,
    parse_timing,
)
from .classifier import Bucket, Category, classify_iteration, collapse_to_bucket
from .errors import ConfigurationError

if TYPE_CHECKING:
    from .metrics import TaskOutcome

ERROR_LOG_NAME = "error.log"
META_NAME = "corpus_meta.json"

_MANIFEST_FIELDS = (
    "task_id",
    "source",
    "backend",
    "solution_file",
    "build_cmd",
    "test_cmd",
    "min_sm",
    "requires",
    "anti_cheat",
    "timing_parser",
    "source_model",
    "reference_mean_ms",
    "curation_bucket",
)


@dataclass
class TaskSpec:
    """Per-task metadata contract consumed by every backend."""

    task_id: str
    source: str = ""
    backend: str = "nvcc"
    solution_file: str = "solution.cu"
    build_cmd: str = ""
    test_cmd: str = ""
    min_sm: int = 0
    requires: list[str] = field(default_factory=list)
    anti_cheat: list[str] = field(default_factory=list)
    timing_parser: str = ""
    source_model: str = "manual"
    reference_mean_ms: float | None = None
    curation_bucket: str | None = None
    extras: dict = field(default_factory=dict)
    stem: str = ""

    def __post_init__(self) -> None:
        if not self.stem:
            self.stem = self.task_id.replace("/", "_")

    def problems(self) -> list[tuple[str, str]]:
        """Field-level validation issues as (field, message) pairs."""
        issues: list[tuple[str, str]] = []
        if not self.task_id:
            issues.append(("task_id", "must be non-empty"))
        if not self.solution_file:
            issues.append(("solution_file", "must be non-empty"))
        try:
            normalize_backend_kind(self.backend)
        except ConfigurationError as exc:
            issues.append(("backend", str(exc)))
        if not isinstance(self.min_sm, int) or self.min_sm < 0:
            issues.append(("min_sm", "must be a non-negative integer"))
        for entry in self.anti_cheat:
            if not isinstance(entry, str) or not entry:
                issues.append(("anti_cheat", "entries must be non-empty strings"))
                break
        if self.timing_parser:
            try:
                if re.compile(self.timing_parser).groups != 1:
                    issues.append(
                        ("timing_parser", "must contain exactly one capture group")
                    )
            except re.error as exc:
                issues.append(("timing_parser", f"bad regex: {exc}"))
        if self.curation_bucket is not None:
            try:
                Bucket(self.curation_bucket)
            except ValueError:
                issues.append(("curation_bucket", f"unknown bucket {self.curation_bucket!r}"))
        return issues

    def to_manifest(self) -> dict:
        doc: dict = {
            "task_id": self.task_id,
            "source": self.source,
            "backend": self.backend,
            "solution_file": self.solution_file,
            "build_cmd": self.build_cmd,
            "test_cmd": self.test_cmd,
            "min_sm": self.min_sm,
            "requires": list(self.requires),
            "anti_cheat": list(self.anti_cheat),
            "timing_parser": self.timing_parser,
            "source_model": self.source_model,
        }
        if self.reference_mean_ms is not None:
            doc["reference_mean_ms"] = self.reference_mean_ms
        if self.curation_bucket is not None:
            doc["curation_bucket"] = self.curation_bucket
        for key in sorted(self.extras):
            doc[key] = self.extras[key]
        return doc

    @classmethod
    def from_manifest(cls, doc: Mapping, stem: str = "") -> "TaskSpec":
        known = {k: doc[k] for k in _MANIFEST_FIELDS if k in doc}
        extras = {k: v for k, v in doc.items() if k not in _MANIFEST_FIELDS}
        return cls(**known, extras=extras, stem=stem)


@dataclass
class BrokenStart:
    """The 4-tuple every repair attempt starts from."""

    prompt: str
    broken_kernel: str
    error_log: str
    native_harness: Path


@dataclass(frozen=True)
class LoadError:
    stem: str
    field: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.stem}: {self.field}: {self.message}"


@dataclass
class LoadedCorpus:
    root: Path
    corpus_id: str
    tasks: list[tuple[TaskSpec, BrokenStart]]
    errors: list[LoadError]

    def specs(self) -> list[TaskSpec]:
        return [spec for spec, _ in self.tasks]

    def get(self, task_id: str) -> tuple[TaskSpec, BrokenStart]:
        for spec, bs in self.tasks:
            if spec.task_id == task_id:
                return spec, bs
        raise KeyError(task_id)

    def fingerprint(self) -> str:
        """SHA-256 over the manifests in task order; identifies the corpus."""
        digest = hashlib.sha256()
        for spec, _ in self.tasks:
            digest.update(
                json.dumps(spec.to_manifest(), sort_keys=True).encode("utf-8")
            )
        return digest.hexdigest()


def load_corpus(root: str | Path) -> LoadedCorpus:
    """Parse every task under root; per-task problems are collected, not fatal.

    Task order is deterministic: lexicographic by task_id.
    """
    root = Path(root)
    if not root.exists():
        raise ConfigurationError(f"corpus root does not exist: {root}")
    corpus_id = root.name
    meta_path = root / META_NAME
    if meta_path.exists():
        corpus_id = json.loads(meta_path.read_text()).get("corpus_id", corpus_id)

    tasks: list[tuple[TaskSpec, BrokenStart]] = []
    errors: list[LoadError] = []
    input_dir = root / "input"
    manifest_stems = (
        {p.stem for p in input_dir.glob("*.json")} if input_dir.exists() else set()
    )
    orphan_stems = {p.stem for p in (root / "prompts").glob("*.txt")} | {
        p.name for p in (root / "testbench").glob("*") if p.is_dir()
    }
    for stem in sorted(orphan_stems - manifest_stems):
        errors.append(LoadError(stem, "manifest", "missing input manifest"))
    if not input_dir.exists():
        return LoadedCorpus(root=root, corpus_id=corpus_id, tasks=[], errors=errors)

    for manifest_path in sorted(input_dir.glob("*.json")):
        stem = manifest_path.stem
        try:
            doc = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            errors.append(LoadError(stem, "manifest", f"invalid JSON: {exc}"))
            continue
        try:
            spec = TaskSpec.from_manifest(doc, stem=stem)
        except TypeError as exc:
            errors.append(LoadError(stem, "manifest", str(exc)))
            continue
        problems = spec.problems()
        if problems:
            for fld, msg in problems:
                errors.append(LoadError(stem, fld, msg))
            continue

        prompt_path = root / "prompts" / f"{stem}.txt"
        bench_dir = root / "testbench" / stem
        kernel_path = bench_dir / spec.solution_file
        log_path = bench_dir / ERROR_LOG_NAME
        if not prompt_path.exists():
            errors.append(LoadError(stem, "prompt", f"missing {prompt_path.name}"))
            continue
        if not bench_dir.is_dir():
            errors.append(LoadError(stem, "testbench", "missing testbench subtree"))
            continue
        if not kernel_path.exists():
            errors.append(
                LoadError(stem, "broken_kernel", f"missing {spec.solution_file}")
            )
            continue
        if not log_path.exists():
            errors.append(LoadError(stem, "error_log", f"missing {ERROR_LOG_NAME}"))
            continue

        broken = BrokenStart(
            prompt=prompt_path.read_text(),
            broken_kernel=kernel_path.read_text(),
            error_log=log_path.read_text(),
            native_harness=bench_dir,
        )
        tasks.append((spec, broken))

    tasks.sort(key=lambda pair: pair[0].task_id)
    return LoadedCorpus(root=root, corpus_id=corpus_id, tasks=tasks, errors=errors)


def write_corpus(
    root: str | Path,
    tasks: Sequence[tuple[TaskSpec, BrokenStart]],
    corpus_id: str | None = None,
    extra_meta: Mapping | None = None,
) -> Path:
    """Write a corpus tree; load_corpus(write_corpus(...)) round-trips the schema."""
    root = Path(root)
    for sub in ("input", "prompts", "testbench"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    meta: dict = {"corpus_id": corpus_id or root.name}
    if extra_meta:
        meta.update(extra_meta)
    (root / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    for spec, broken in tasks:
        (root / "input" / f"{spec.stem}.json").write_text(
            json.dumps(spec.to_manifest(), indent=2) + "\n"
        )
        (root / "prompts" / f"{spec.stem}.txt").write_text(broken.prompt)
        bench = root / "testbench" / spec.stem
        if broken.native_harness and Path(broken.native_harness).is_dir() and (
            Path(broken.native_harness).resolve() != bench.resolve()
        ):
            shutil.copytree(broken.native_harness, bench, dirs_exist_ok=True)
        else:
            bench.mkdir(parents=True, exist_ok=True)
        (bench / spec.solution_file).write_text(broken.broken_kernel)
        (bench / ERROR_LOG_NAME).write_text(broken.error_log)
    return root


# ---------------------------------------------------------------------------
# Broken-start validation


@dataclass
class ValidationVerdict:
    """Outcome of the twice-run reproducibility check on a broken start.

    Categories are recorded as effective failure labels: the taxonomy
    category for ordinary failures, perf_broken for a correctness pass that
    missed the gate, passed for a full pass.
    """

    task_id: str
    reproducible: bool
    categories: list[str]
    unverifiable: bool = False
    reason: str = ""


def _effective_label(spec: TaskSpec, outcomes, gate_p: float) -> str:
    from .loop import apply_perf_gate

    verdict = classify_iteration(outcomes)
    if verdict.category is not Category.PASSED:
        return verdict.category.value
    speedup = None
    if spec.reference_mean_ms:
        candidate_ms = parse_timing(spec, outcomes[-1].stdout)
        if candidate_ms:
            speedup = spec.reference_mean_ms / candidate_ms
    if apply_perf_gate(speedup, gate_p):
        return Bucket.PASSED.value
    return Bucket.PERF_BROKEN.value


def validate_task(
    spec: TaskSpec,
    broken: BrokenStart,
    handle: BackendHandle,
    gate_p: float = 0.7,
) -> ValidationVerdict:
    """Check that the broken kernel reproduces the same non-passing label twice.

    Categories, not byte-identical logs, are compared: timestamps and
    absolute paths vary legitimately. An unavailable backend yields an
    unverifiable verdict, not a failure.
    """
    if normalize_backend_kind(spec.backend) != handle.kind:
        return ValidationVerdict(
            task_id=spec.task_id,
            reproducible=False,
            categories=[],
            unverifiable=True,
            reason=f"backend mismatch: task wants {spec.backend}, handle is {handle.kind}",
        )
    labels: list[str] = []
    for _ in range(2):
        try:
            outcomes = execute_candidate(
                handle, spec, broken.broken_kernel, broken.native_harness
            )
            labels.append(_effective_label(spec, outcomes, gate_p))
        except Exception as exc:  # backend unavailable, not a task failure
            return ValidationVerdict(
                task_id=spec.task_id,
                reproducible=False,
                categories=labels,
                unverifiable=True,
                reason=f"backend unavailable: {exc}",
            )
    if Bucket.PASSED.value in labels:
        return ValidationVerdict(
            task_id=spec.task_id,
            reproducible=False,
            categories=labels,
            reason="broken start passes",
        )
    reproducible = labels[0] == labels[1]
    reason = "" if reproducible else "categories differ between runs"
    return ValidationVerdict(
        task_id=spec.task_id,
        reproducible=reproducible,
        categories=labels,
        reason=reason,
    )


# ---------------------------------------------------------------------------
# Difficulty-tier induction


@dataclass(frozen=True)
class DifficultyTier:
    tier: str  # L1..L5
    solver_count: int
    mean_iterations: float | None


@dataclass
class TierInduction:
    tiers: dict[str, DifficultyTier]
    excluded: list[str]  # tasks lacking full panel coverage

    def slice(self, tier: str) -> list[str]:
        return sorted(t for t, d in self.tiers.items() if d.tier == tier)


def induce_tiers(
    outcomes: Iterable["TaskOutcome"], panel: Sequence[str]
) -> TierInduction:
    """Derive empirical difficulty tiers from panel trajectories.

    L1: solved by the whole panel with mean first-pass iteration <= 2;
    L2: solved by the whole panel, mean > 2; L3: solved by 3-5 members;
    L4: by 1-2; L5: by none. Tasks without a trajectory from every panel
    member are excluded and reported.
    """
    if not panel:
        raise ConfigurationError("panel required")
    panel_set = set(panel)
    per_task: dict[str, dict[str, int | None]] = {}
    for outcome in outcomes:
        if outcome.fixer_name not in panel_set:
            continue
        per_task.setdefault(outcome.task_id, {})[outcome.fixer_name] = outcome.passed_at

    tiers: dict[str, DifficultyTier] = {}
    excluded: list[str] = []
    for task_id, by_fixer in sorted(per_task.items()):
        if set(by_fixer) != panel_set:
            excluded.append(task_id)
            continue
        passes = [it for it in by_fixer.values() if it is not None]
        count = len(passes)
        mean_iter = fmean(passes) if passes else None
        if count == len(panel_set):
            tier = "L1" if mean_iter is not None and mean_iter <= 2 else "L2"
        elif count == 0:
            tier = "L5"
        elif count <= 2:
            tier = "L4"
        else:
            tier = "L3"
        tiers[task_id] = DifficultyTier(
            tier=tier, solver_count=count, mean_iterations=mean_iter
        )
    return TierInduction(tiers=tiers, excluded=excluded)
