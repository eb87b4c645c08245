"""Error-aware feedback rendering at richness levels L0 through L4.

The richness ladder is strict: L0 is empty, L1 states that the attempt
failed plus the category, L2 adds the primary error signature, L3 adds the
category-dispatched log fragment, and L4 adds profiler signals from an
external provider. L3_raw is a sibling of L3, not a superset: the raw
stderr tail with no category-aware reformatting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import yaml

from .classifier import Category, ClassifierVerdict
from .errors import ConfigurationError

if TYPE_CHECKING:
    from .backend import ExecutionOutcome


class FeedbackLevel(str, Enum):
    L0 = "L0"
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    L3_RAW = "L3_raw"
    L4 = "L4"

    @classmethod
    def parse(cls, value: "str | FeedbackLevel") -> "FeedbackLevel":
        if isinstance(value, cls):
            return value
        normalized = {"l3*": "L3_raw", "l3-raw": "L3_raw", "l3_raw": "L3_raw"}.get(
            value.lower(), value.upper()
        )
        try:
            return cls(normalized)
        except ValueError as exc:
            raise ConfigurationError(f"unknown feedback level {value!r}") from exc


# Information carried by each level's body; the ladder L1 <= L2 <= L3 <= L4
# is monotone, with L3_raw deliberately outside it.
INFORMATION_FIELDS: dict[FeedbackLevel, frozenset[str]] = {
    FeedbackLevel.L0: frozenset(),
    FeedbackLevel.L1: frozenset({"category"}),
    FeedbackLevel.L2: frozenset({"category", "signature"}),
    FeedbackLevel.L3: frozenset({"category", "signature", "log_fragment"}),
    FeedbackLevel.L3_RAW: frozenset({"log_fragment"}),
    FeedbackLevel.L4: frozenset(
        {"category", "signature", "log_fragment", "profiler_signals"}
    ),
}

ProfilerProvider = Callable[[], Mapping[str, str]]


@dataclass(frozen=True)
class FeedbackMessage:
    body: str
    level: FeedbackLevel
    category: Category
    truncated: bool


@dataclass(frozen=True)
class FeedbackConfig:
    stderr_head_lines: int = 50
    test_log_tail_lines: int = 30
    raw_tail_lines: int = 50
    char_budget: int = 8000


@dataclass(frozen=True)
class TemplateSet:
    version: int
    brief: str
    brief_signature: str
    perf_gate: str
    templates: dict[Category, str]
    extract: dict[str, re.Pattern[str]]


_DEFAULT_TEMPLATES: TemplateSet | None = None


def load_template_set(path: str | Path | None = None) -> TemplateSet:
    if path is None:
        text = (resources.files("fixerbench") / "data" / "templates.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    try:
        templates = {Category(c): t for c, t in doc["templates"].items()}
        extract = {
            name: re.compile(rx, re.IGNORECASE) for name, rx in doc["extract"].items()
        }
        return TemplateSet(
            version=int(doc.get("version", 0)),
            brief=doc["brief"],
            brief_signature=doc["brief_signature"],
            perf_gate=doc["perf_gate"],
            templates=templates,
            extract=extract,
        )
    except (KeyError, ValueError, re.error) as exc:
        raise ConfigurationError(f"malformed template file: {exc}") from exc


def default_template_set() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_template_set()
    return _DEFAULT_TEMPLATES


def _head(text: str, n: int) -> str:
    return "\n".join(text.splitlines()[:n])

def _tail(text: str, n: int) -> str:
    return "\n".join(text.splitlines()[-n:]) if text else ""


def _terminal_failed(outcomes: Sequence["ExecutionOutcome"]):
    for outcome in outcomes:
        if outcome.failed:
            return outcome
    return outcomes[-1] if outcomes else None


def _extract_fields(templates: TemplateSet, text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for name, pattern in templates.extract.items():
        match = pattern.search(text)
        fields[name] = match.group(1).strip() if match else "unavailable"
    return fields


def _finish(
    body: str, level: FeedbackLevel, category: Category, config: FeedbackConfig
) -> FeedbackMessage:
    truncated = len(body) > config.char_budget
    if truncated:
        body = body[: config.char_budget]
    return FeedbackMessage(body=body, level=level, category=category, truncated=truncated)


def render_feedback(
    verdict: ClassifierVerdict,
    outcomes: Sequence["ExecutionOutcome"],
    level: "FeedbackLevel | str",
    *,
    config: FeedbackConfig | None = None,
    templates: TemplateSet | None = None,
    profiler_provider: ProfilerProvider | None = None,
) -> FeedbackMessage:
    """Render the feedback message for a failed iteration at one level."""
    level = FeedbackLevel.parse(level)
    if verdict.category is Category.PASSED:
        raise ConfigurationError("render_feedback requires a failing verdict")
    if level is FeedbackLevel.L4 and profiler_provider is None:
        raise ConfigurationError("feedback level L4 requires a profiler provider")
    config = config or FeedbackConfig()
    templates = templates or default_template_set()

    if level is FeedbackLevel.L0:
        return _finish("", level, verdict.category, config)

    brief = templates.brief.format(category=verdict.category.value)
    if level is FeedbackLevel.L1:
        return _finish(brief, level, verdict.category, config)

    signature = verdict.primary_signature or "unavailable"
    if level is FeedbackLevel.L2:
        body = brief + " " + templates.brief_signature.format(signature=signature)
        return _finish(body, level, verdict.category, config)

    terminal = _terminal_failed(outcomes)
    stderr = terminal.stderr if terminal else ""
    stdout = terminal.stdout if terminal else ""
    combined = stderr + "\n" + stdout

    if level is FeedbackLevel.L3_RAW:
        raw = stderr if stderr.strip() else stdout
        return _finish(_tail(raw, config.raw_tail_lines), level, verdict.category, config)

    fields = _extract_fields(templates, combined)
    budget_s = "T"
    if terminal is not None and terminal.timed_out:
        budget_s = str(int(round(terminal.wall_time_ms / 1000.0)))
    fields.update(
        n=str(config.stderr_head_lines),
        stderr_head=_head(stderr, config.stderr_head_lines),
        test_log_tail=_tail(combined.strip(), config.test_log_tail_lines),
        error_signature=signature,
        budget=budget_s,
    )
    template = templates.templates.get(
        verdict.category, templates.templates[Category.BUILDABILITY]
    )
    body = template.format(**fields)

    if level is FeedbackLevel.L4:
        signals = profiler_provider() if profiler_provider else {}
        lines = [f"{key}: {value}" for key, value in sorted(signals.items())]
        body += "\nProfiler signals:\n" + ("\n".join(lines) if lines else "(none)")

    return _finish(body, level, verdict.category, config)


def render_perf_gate_feedback(
    speedup: float | None,
    threshold: float,
    level: "FeedbackLevel | str",
    *,
    config: FeedbackConfig | None = None,
    templates: TemplateSet | None = None,
) -> FeedbackMessage:
    """Feedback for a correctness pass that missed the performance gate."""
    level = FeedbackLevel.parse(level)
    config = config or FeedbackConfig()
    templates = templates or default_template_set()
    if level is FeedbackLevel.L0:
        return _finish("", level, Category.PASSED, config)
    shown = f"{speedup:.2f}" if speedup is not None else "an unmeasured"
    body = templates.perf_gate.format(speedup=shown, threshold=f"{threshold:.2f}")
    return _finish(body, level, Category.PASSED, config)


def stub_profiler_provider() -> Mapping[str, str]:
    """Placeholder provider: profiler integration is an external concern."""
    return {}
