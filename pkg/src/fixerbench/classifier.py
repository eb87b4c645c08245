"""Deterministic eight-category failure classification from staged logs.

Dispatch walks an iteration's outcomes in execution order; the first stage
that failed selects a per-stage category chain, patterns fire in priority
order within the chain, and unmatched logs fall through to the stage
default (buildability for the build stage, functional_correctness for
runtime stages). A sanitizer log, when present, can override a
runtime-stage functional_correctness verdict to illegal_memory_access.
If patterns from two or more distinct categories match within the fired
stage, the verdict keeps the priority-first category but is flagged
unclassified.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import yaml

from .errors import ConfigurationError

if TYPE_CHECKING:
    from .backend import ExecutionOutcome


class Category(str, Enum):
    """Fine-grained per-iteration failure taxonomy, in collapse order."""

    ENVIRONMENT_DEPENDENCY = "environment_dependency"
    INTEGRATION = "integration"
    BUILDABILITY = "buildability"
    OUT_OF_MEMORY = "out_of_memory"
    ILLEGAL_MEMORY_ACCESS = "illegal_memory_access"
    TIMEOUT = "timeout"
    FUNCTIONAL_CORRECTNESS = "functional_correctness"
    PASSED = "passed"


class Bucket(str, Enum):
    """Coarse five-bucket grouping (plus the evaluation-time perf tag)."""

    COMPILE_ERROR = "compile_error"
    MEMORY_CRASH = "memory_crash"
    TIMEOUT = "timeout"
    LOGIC_ERROR = "logic_error"
    PASSED = "passed"
    PERF_BROKEN = "perf_broken"


CATEGORY_ORDER: tuple[Category, ...] = tuple(Category)

RUNTIME_STAGES = ("run", "test")
KNOWN_STAGES = ("preflight", "build") + RUNTIME_STAGES

_COMPILE_CATEGORIES = (
    Category.ENVIRONMENT_DEPENDENCY,
    Category.INTEGRATION,
    Category.BUILDABILITY,
)


@dataclass(frozen=True)
class Pattern:
    """One sub-rule: a signature token plus the regex that fires it."""

    token: str
    regex: re.Pattern[str]
    category: Category
    stages: tuple[str, ...] | None = None  # None: valid in every stage

    def applies_to(self, stage: str) -> bool:
        return self.stages is None or stage in self.stages


@dataclass(frozen=True)
class PatternSet:
    version: int
    stage_chains: dict[str, tuple[Category, ...]]
    stage_fallbacks: dict[str, Category]
    patterns: dict[Category, tuple[Pattern, ...]]
    sanitizer: tuple[Pattern, ...]


@dataclass(frozen=True)
class ClassifierVerdict:
    category: Category
    bucket: Bucket
    primary_signature: str
    unclassified: bool
    matched_stage: str


_DEFAULT_PATTERN_SET: PatternSet | None = None


def _compile_pattern(raw: dict, category: Category) -> Pattern:
    try:
        regex = re.compile(raw["regex"], re.IGNORECASE)
    except re.error as exc:
        raise ConfigurationError(
            f"bad regex for pattern {raw.get('token', '?')}: {exc}"
        ) from exc
    stages = tuple(raw["stages"]) if "stages" in raw else None
    return Pattern(token=raw["token"], regex=regex, category=category, stages=stages)


def load_pattern_set(path: str | Path | None = None) -> PatternSet:
    """Load the classification pattern file (the packaged one by default)."""
    if path is None:
        text = (resources.files("fixerbench") / "data" / "patterns.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    try:
        chains = {
            stage: tuple(Category(c) for c in cats)
            for stage, cats in doc["stage_chains"].items()
        }
        fallbacks = {
            stage: Category(c) for stage, c in doc["stage_fallbacks"].items()
        }
        patterns = {
            Category(cat): tuple(_compile_pattern(p, Category(cat)) for p in plist)
            for cat, plist in doc["patterns"].items()
        }
        sanitizer = tuple(
            _compile_pattern(p, Category.ILLEGAL_MEMORY_ACCESS)
            for p in doc.get("sanitizer_override", [])
        )
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed pattern file: {exc}") from exc
    for stage in KNOWN_STAGES:
        if stage not in chains or stage not in fallbacks:
            raise ConfigurationError(f"pattern file misses stage {stage!r}")
    return PatternSet(
        version=int(doc.get("version", 0)),
        stage_chains=chains,
        stage_fallbacks=fallbacks,
        patterns=patterns,
        sanitizer=sanitizer,
    )


def default_pattern_set() -> PatternSet:
    global _DEFAULT_PATTERN_SET
    if _DEFAULT_PATTERN_SET is None:
        _DEFAULT_PATTERN_SET = load_pattern_set()
    return _DEFAULT_PATTERN_SET


def _first_match(
    patterns: Sequence[Pattern], text: str, stage: str
) -> Pattern | None:
    for pattern in patterns:
        if pattern.applies_to(stage) and pattern.regex.search(text):
            return pattern
    return None


def classify_iteration(
    outcomes: Sequence["ExecutionOutcome"],
    pattern_set: PatternSet | None = None,
) -> ClassifierVerdict:
    """Assign one taxonomy category to an iteration from its staged outcomes.

    Every input yields a verdict: a clean pass when no stage failed,
    otherwise the category dispatched from the first failed stage.
    """
    if not outcomes:
        raise ConfigurationError("classify_iteration requires at least one outcome")
    ps = pattern_set or default_pattern_set()

    fired = next((o for o in outcomes if o.failed), None)
    if fired is None:
        return ClassifierVerdict(
            category=Category.PASSED,
            bucket=Bucket.PASSED,
            primary_signature="",
            unclassified=False,
            matched_stage=outcomes[-1].stage,
        )

    stage = fired.stage
    if stage not in ps.stage_chains:
        raise ConfigurationError(f"unknown execution stage {stage!r}")
    text = fired.stderr + "\n" + fired.stdout

    matched: dict[Category, Pattern] = {}
    for category in ps.stage_chains[stage]:
        hit = _first_match(ps.patterns.get(category, ()), text, stage)
        if hit is not None:
            matched[category] = hit

    if matched:
        category = next(c for c in ps.stage_chains[stage] if c in matched)
        signature = matched[category].token
    else:
        category = ps.stage_fallbacks[stage]
        signature = ""
    unclassified = len(matched) >= 2

    # Sanitizer stream override: runtime functional_correctness can be
    # flipped to illegal_memory_access by auxiliary sanitizer evidence.
    if category is Category.FUNCTIONAL_CORRECTNESS and stage in RUNTIME_STAGES:
        for outcome in outcomes:
            log = outcome.sanitizer_log
            if not log:
                continue
            hit = _first_match(ps.sanitizer, log, stage)
            if hit is not None:
                category = Category.ILLEGAL_MEMORY_ACCESS
                signature = hit.token
                break

    return ClassifierVerdict(
        category=category,
        bucket=collapse_to_bucket(category, perf_gate_failed=False),
        primary_signature=signature,
        unclassified=unclassified,
        matched_stage=stage,
    )


def collapse_to_bucket(category: Category, perf_gate_failed: bool) -> Bucket:
    """Total map from (category, gate flag) to the five-bucket grouping.

    The perf_broken tag applies only to correctness passes that failed the
    performance gate; for every non-passed category the flag is ignored.
    """
    if category in _COMPILE_CATEGORIES:
        return Bucket.COMPILE_ERROR
    if category in (Category.OUT_OF_MEMORY, Category.ILLEGAL_MEMORY_ACCESS):
        return Bucket.MEMORY_CRASH
    if category is Category.TIMEOUT:
        return Bucket.TIMEOUT
    if category is Category.FUNCTIONAL_CORRECTNESS:
        return Bucket.LOGIC_ERROR
    return Bucket.PERF_BROKEN if perf_gate_failed else Bucket.PASSED
