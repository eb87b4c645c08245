"""Fixer clients: obtain a candidate solution for a prompt bundle.

Two implementations share the request contract: a deterministic scripted
fixer that replays per-(task, iteration) response files, and a remote
chat-completion client with bounded retries. Prompt assembly order is
frozen (task prompt, broken kernel, original error log, then history oldest
to newest) and recorded in the run's config snapshot.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ConfigurationError, EmptyCandidateError, FixerUnavailableError

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)\n?```", re.DOTALL)

SCRIPTED = "scripted"
HTTP = "http"


@dataclass
class FixerConfig:
    """One fixer under evaluation."""

    name: str
    kind: str = SCRIPTED
    endpoint: str = ""  # response directory (scripted) or URL (http)
    temperature: float = 0.7
    max_output_tokens: int = 4096
    api_key_env: str = ""
    is_source_model: bool = False
    max_retries: int = 3
    request_timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.kind not in (SCRIPTED, HTTP):
            raise ConfigurationError(f"unknown fixer kind {self.kind!r}")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")


@dataclass
class PromptBundle:
    """Everything the fixer sees for one attempt."""

    prompt: str
    broken_kernel: str
    error_log: str
    history: list[tuple[str, str]] = field(default_factory=list)

    def messages(self) -> list[dict]:
        """Chat-style payload: initial user turn, then history pairs."""
        initial = (
            f"{self.prompt}\n\n[broken kernel]\n{self.broken_kernel}\n\n"
            f"[original error log]\n{self.error_log}"
        )
        messages = [{"role": "user", "content": initial}]
        for candidate, feedback in self.history:
            messages.append({"role": "assistant", "content": candidate})
            messages.append({"role": "user", "content": feedback})
        return messages


def build_bundle(
    prompt: str,
    broken_kernel: str,
    error_log: str,
    history: Sequence[tuple[str, str]],
    depth: int,
) -> PromptBundle:
    """Bundle with the most recent `depth` (candidate, feedback) pairs."""
    kept = list(history)[-depth:] if depth > 0 else []
    return PromptBundle(
        prompt=prompt,
        broken_kernel=broken_kernel,
        error_log=error_log,
        history=kept,
    )


def _scripted_response(cfg: FixerConfig, task_stem: str, iteration: int) -> str:
    base = Path(cfg.endpoint)
    for candidate in (
        base / task_stem / f"iter_{iteration}.txt",
        base / task_stem / "default.txt",
        base / "default.txt",
    ):
        if candidate.exists():
            return candidate.read_text()
    raise FixerUnavailableError(
        f"scripted fixer {cfg.name} has no response for {task_stem} iteration {iteration}"
    )


def _http_response(
    cfg: FixerConfig, bundle: PromptBundle, temperature: float
) -> str:
    import os

    import requests

    headers = {"Content-Type": "application/json"}
    if cfg.api_key_env:
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise ConfigurationError(
                f"environment variable {cfg.api_key_env} not set for fixer {cfg.name}"
            )
        headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": cfg.name,
        "messages": bundle.messages(),
        "temperature": temperature,
        "max_tokens": cfg.max_output_tokens,
    }
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries):
        try:
            response = requests.post(
                cfg.endpoint,
                json=payload,
                headers=headers,
                timeout=cfg.request_timeout_s,
            )
            response.raise_for_status()
            doc = response.json()
            return doc["choices"][0]["message"]["content"]
        except Exception as exc:  # transport or schema failure: retry
            last_error = exc
            if attempt + 1 < cfg.max_retries:
                time.sleep(min(2.0**attempt, 8.0))
    raise FixerUnavailableError(
        f"fixer {cfg.name} unavailable after {cfg.max_retries} attempts: {last_error}"
    )


def request_candidate(
    cfg: FixerConfig,
    bundle: PromptBundle,
    *,
    task_stem: str,
    iteration: int,
    temperature: float | None = None,
) -> str:
    """Return the fixer's full raw response for one attempt."""
    if cfg.kind == SCRIPTED:
        return _scripted_response(cfg, task_stem, iteration)
    return _http_response(
        cfg, bundle, cfg.temperature if temperature is None else temperature
    )


class FixerClient:
    """Request wrapper that counts issued calls (for budget accounting)."""

    def __init__(self, cfg: FixerConfig):
        self.cfg = cfg
        self.calls = 0

    @property
    def name(self) -> str:
        return self.cfg.name

    def request(
        self,
        bundle: PromptBundle,
        *,
        task_stem: str,
        iteration: int,
        temperature: float | None = None,
    ) -> str:
        self.calls += 1
        return request_candidate(
            self.cfg,
            bundle,
            task_stem=task_stem,
            iteration=iteration,
            temperature=temperature,
        )


def extract_code(response: str) -> str:
    """Extract the candidate solution from a raw fixer response.

    The last fenced code block wins (models often restate the broken code
    before the revision); a fenceless response is taken whole.
    """
    if not response.strip():
        raise EmptyCandidateError("fixer response contained no text")
    blocks = _FENCE_RE.findall(response)
    if blocks:
        return blocks[-1]
    return response
