"""Run-artifact persistence and table rendering.

A run writes five artifact classes into a timestamped result directory:

    <root>/<run_id>/
        config.yaml        frozen effective config snapshot
        tasks.json         task metadata the analysis needs (source model,
                           curation bucket, reference timing)
        manifest.jsonl     per-iteration rows, contiguous per (fixer, task)
        shards/            live append-only shards (crash-safe source of
                           the merged manifest)
        logs/              raw build/test logs, verbatim
        responses/         raw fixer responses, persisted before parsing
        solutions/         deduplicated candidate code, content-addressed

Analysis is a pure function of the result directory: rows plus tasks.json
reproduce every table byte-identically.
"""

from __future__ import annotations

import datetime as _dt
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import yaml

from .classifier import Bucket, Category
from .errors import ConfigurationError, EvaluationError
from .hashing import solution_hash
from .loop import (
    IterationRecord,
    LoopRecorder,
    ProtocolConfig,
    Trajectory,
)
from .metrics import (
    CURATION_BUCKETS,
    IterationSummary,
    MetricReport,
    StagnationBreakdown,
    TaskOutcome,
    build_metric_report,
)

if TYPE_CHECKING:
    from .backend import ExecutionOutcome
    from .corpus import LoadedCorpus, TaskSpec
    from .fixer import FixerConfig
    from .timing import SpeedupMeasurement

MANIFEST_NAME = "manifest.jsonl"
CONFIG_NAME = "config.yaml"
TASKS_NAME = "tasks.json"


def _utc_stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def make_run_dir(result_root: str | Path, label: str = "run") -> Path:
    """Create a fresh result directory named <timestamp>-<label>."""
    root = Path(result_root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"result root not writable: {exc}") from exc
    base = f"{_utc_stamp()}-{label}"
    run_dir = root / base
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = root / f"{base}-{suffix}"
    run_dir.mkdir()
    return run_dir


class RunWriter(LoopRecorder):
    """Persist loop artifacts; safe for concurrent loops via a single lock."""

    def __init__(
        self,
        run_dir: Path,
        cfg: ProtocolConfig,
        fixers: Sequence["FixerConfig"],
        corpus: "LoadedCorpus",
        extra_config: Mapping | None = None,
    ) -> None:
        self.run_dir = Path(run_dir)
        self.run_id = self.run_dir.name
        self._lock = threading.Lock()
        self._rows: dict[tuple[str, str], list[dict]] = {}
        (self.run_dir / "shards").mkdir(exist_ok=True)
        (self.run_dir / "logs").mkdir(exist_ok=True)
        (self.run_dir / "responses").mkdir(exist_ok=True)
        (self.run_dir / "solutions").mkdir(exist_ok=True)
        self._write_config(cfg, fixers, corpus, extra_config or {})
        self._write_tasks(corpus)

    def _write_config(self, cfg, fixers, corpus, extra) -> None:
        snapshot = {
            "run_id": self.run_id,
            "protocol": cfg.to_dict(),
            "fixers": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "endpoint": f.endpoint,
                    "temperature": f.temperature,
                    "is_source_model": f.is_source_model,
                }
                for f in fixers
            ],
            "corpus": {
                "id": corpus.corpus_id,
                "root": str(corpus.root),
                "sha256": corpus.fingerprint(),
                "n_tasks": len(corpus.tasks),
            },
            "prompt_assembly": "prompt, broken kernel, original error log, history oldest-to-newest",
        }
        snapshot.update(extra)
        (self.run_dir / CONFIG_NAME).write_text(
            yaml.safe_dump(snapshot, sort_keys=True)
        )

    def _write_tasks(self, corpus: "LoadedCorpus") -> None:
        meta = {
            spec.task_id: {
                "stem": spec.stem,
                "source_model": spec.source_model,
                "curation_bucket": spec.curation_bucket,
                "reference_mean_ms": spec.reference_mean_ms,
                "backend": spec.backend,
            }
            for spec, _ in corpus.tasks
        }
        (self.run_dir / TASKS_NAME).write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )

    # -- LoopRecorder hooks -------------------------------------------------

    def on_response(self, fixer_name, task_stem, iteration, raw) -> None:
        target = self.run_dir / "responses" / fixer_name / task_stem
        with self._lock:
            target.mkdir(parents=True, exist_ok=True)
            (target / f"iter_{iteration}.txt").write_text(raw)

    def on_iteration(
        self,
        fixer_name: str,
        task_id: str,
        record: IterationRecord,
        outcomes: "Sequence[ExecutionOutcome]",
        candidate_text: str | None,
        measurement: "SpeedupMeasurement | None",
    ) -> None:
        row = {
            "run_id": self.run_id,
            "fixer": fixer_name,
            "task_id": task_id,
            "iteration": record.index,
            "candidate_hash": record.candidate_hash,
            "category": record.category.value,
            "bucket": record.bucket.value,
            "signature": record.primary_signature,
            "passed_correctness": record.passed_correctness,
            "speedup": record.speedup,
            "cv": measurement.cv if measurement else None,
            "gate_passed": record.gate_passed,
            "wall_time_ms": record.wall_time_ms,
            "stop_reason": None,
            "ts": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        stem = task_id.replace("/", "_")
        with self._lock:
            self._rows.setdefault((fixer_name, task_id), []).append(row)
            shard = self.run_dir / "shards" / f"{fixer_name}__{stem}.jsonl"
            with open(shard, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            if candidate_text is not None:
                store = self.run_dir / "solutions" / f"{record.candidate_hash}.txt"
                if not store.exists():
                    store.write_text(candidate_text)
            log_dir = self.run_dir / "logs" / fixer_name / stem
            log_dir.mkdir(parents=True, exist_ok=True)
            for outcome in outcomes:
                prefix = f"iter_{record.index}_{outcome.stage}"
                (log_dir / f"{prefix}.stdout.log").write_text(outcome.stdout)
                (log_dir / f"{prefix}.stderr.log").write_text(outcome.stderr)
                if outcome.sanitizer_log:
                    (log_dir / f"{prefix}.sanitizer.log").write_text(
                        outcome.sanitizer_log
                    )

    def on_trajectory(self, trajectory: Trajectory) -> None:
        with self._lock:
            rows = self._rows.get((trajectory.fixer_name, trajectory.task_id), [])
            if rows:
                rows[-1]["stop_reason"] = trajectory.stop_reason

    def finalize(self) -> Path:
        """Merge shards into the contiguous, iteration-ordered manifest."""
        manifest = self.run_dir / MANIFEST_NAME
        with self._lock, open(manifest, "w", encoding="utf-8") as fh:
            for key in sorted(self._rows):
                for row in self._rows[key]:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        return manifest


# ---------------------------------------------------------------------------
# Loading a stored run


@dataclass
class LoadedRun:
    run_dir: Path
    config: dict
    tasks: dict[str, dict]
    outcomes: dict[str, list[TaskOutcome]]  # fixer -> outcomes in task order

    @property
    def protocol(self) -> ProtocolConfig:
        doc = dict(self.config.get("protocol", {}))
        return ProtocolConfig(**doc)

    def fixer_names(self) -> list[str]:
        return sorted(self.outcomes)


def _rows_from_dir(run_dir: Path) -> list[dict]:
    manifest = run_dir / MANIFEST_NAME
    rows: list[dict] = []
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        return rows
    shard_dir = run_dir / "shards"
    if not shard_dir.is_dir():
        raise EvaluationError(f"no manifest or shards under {run_dir}")
    for shard in sorted(shard_dir.glob("*.jsonl")):
        with open(shard, encoding="utf-8") as fh:
            rows.extend(json.loads(line) for line in fh if line.strip())
    return rows


def load_run(run_dir: str | Path) -> LoadedRun:
    """Rebuild per-task outcomes from the stored manifest alone."""
    run_dir = Path(run_dir)
    config_path = run_dir / CONFIG_NAME
    config = yaml.safe_load(config_path.read_text()) if config_path.exists() else {}
    tasks_path = run_dir / TASKS_NAME
    tasks = json.loads(tasks_path.read_text()) if tasks_path.exists() else {}

    grouped: dict[tuple[str, str], list[dict]] = {}
    for row in _rows_from_dir(run_dir):
        grouped.setdefault((row["fixer"], row["task_id"]), []).append(row)

    outcomes: dict[str, list[TaskOutcome]] = {}
    for (fixer, task_id), rows in sorted(grouped.items()):
        rows.sort(key=lambda r: r["iteration"])
        meta = tasks.get(task_id, {})
        iterations = [
            IterationSummary(
                category=Category(r["category"]),
                signature=r["signature"],
                candidate_hash=r["candidate_hash"],
                passed_correctness=r["passed_correctness"],
                speedup=r["speedup"],
                gate_passed=r["gate_passed"],
                bucket=Bucket(r["bucket"]),
            )
            for r in rows
        ]
        stop_reason = rows[-1].get("stop_reason") or "max_iterations"
        bucket = meta.get("curation_bucket")
        outcomes.setdefault(fixer, []).append(
            TaskOutcome(
                task_id=task_id,
                fixer_name=fixer,
                stop_reason=stop_reason,
                iterations=iterations,
                initial_bucket=Bucket(bucket) if bucket else None,
                source_model=meta.get("source_model", "manual"),
            )
        )
    return LoadedRun(run_dir=run_dir, config=config, tasks=tasks, outcomes=outcomes)


def reports_from_run(
    run: LoadedRun,
    fixers: Mapping[str, "FixerConfig"] | None = None,
    gate_p: float | None = None,
) -> dict[str, MetricReport]:
    """Recompute every fixer's MetricReport from a stored run.

    gate_p re-applies the performance gate post hoc; None keeps the
    run-time gate decisions.
    """
    from .fixer import FixerConfig

    cfg = run.protocol
    known = {f["name"]: f for f in run.config.get("fixers", [])}
    reports = {}
    for name, outcomes in run.outcomes.items():
        if fixers and name in fixers:
            fixer_cfg = fixers[name]
        else:
            snap = known.get(name, {})
            fixer_cfg = FixerConfig(
                name=name,
                kind=snap.get("kind", "scripted"),
                endpoint=snap.get("endpoint", ""),
                is_source_model=bool(snap.get("is_source_model", False)),
            )
        reports[name] = build_metric_report(
            outcomes,
            fixer_cfg,
            k=cfg.k_budget,
            gate_p=cfg.perf_gate_p if gate_p is None else gate_p,
            reapply_gate=gate_p is not None,
        )
    return reports


# ---------------------------------------------------------------------------
# Table rendering


def _pct(value: float | None) -> str:
    return "---" if value is None else f"{value * 100.0:.1f}%"


def render_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


def render_tsv(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["\t".join(headers)]
    lines.extend("\t".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _sorted_reports(reports: Mapping[str, MetricReport]) -> list[MetricReport]:
    return sorted(
        reports.values(),
        key=lambda r: (-(r.pass_at_k if r.pass_at_k is not None else -1.0), r.fixer_name),
    )


def metric_snapshot_table(reports: Mapping[str, MetricReport]) -> tuple[list[str], list[list[str]]]:
    ordered = _sorted_reports(reports)
    k = ordered[0].k if ordered else 5
    headers = [
        "fixer",
        "pass@1",
        f"debug_rate@{k}",
        f"pass@{k}",
        "stagnation%",
        "dominant_signal",
    ]
    rows = [
        [
            r.fixer_name,
            _pct(r.pass_at_1),
            _pct(r.debug_rate_at_k),
            _pct(r.pass_at_k),
            _pct(r.stagnation.overall if r.stagnation else None),
            r.dominant_signal or "---",
        ]
        for r in ordered
    ]
    return headers, rows


def fix_rate_table(reports: Mapping[str, MetricReport]) -> tuple[list[str], list[list[str]]]:
    ordered = _sorted_reports(reports)
    counts = ordered[0].bucket_n if ordered else {}
    headers = ["fixer"] + [
        f"{b.value}(n={counts.get(b, 0)})" for b in CURATION_BUCKETS
    ]
    rows = [
        [r.fixer_name] + [_pct(r.fix_rate.get(b)) for b in CURATION_BUCKETS]
        for r in ordered
    ]
    return headers, rows


def stagnation_table(reports: Mapping[str, MetricReport]) -> tuple[list[str], list[list[str]]]:
    from .loop import STAGNATION_SIGNALS

    headers = ["fixer", "n_fail", "overall"] + list(STAGNATION_SIGNALS)
    rows = []
    for r in _sorted_reports(reports):
        breakdown: StagnationBreakdown | None = r.stagnation
        rows.append(
            [
                r.fixer_name,
                str(breakdown.n_fail if breakdown else 0),
                _pct(breakdown.overall if breakdown else None),
            ]
            + [
                _pct(breakdown.per_signal.get(s) if breakdown else None)
                for s in STAGNATION_SIGNALS
            ]
        )
    return headers, rows


def transition_tables(reports: Mapping[str, MetricReport]) -> str:
    blocks = []
    for r in _sorted_reports(reports):
        if r.transition is None:
            continue
        headers = ["from\\to"] + [c.value for c in r.transition.categories]
        rows = []
        for i, cat in enumerate(r.transition.categories):
            rows.append(
                [cat.value]
                + [
                    f"{v:.3f}" if r.transition.support_counts[i][j] or v else "0"
                    for j, v in enumerate(r.transition.entries[i])
                ]
            )
        blocks.append(f"# transition matrix: {r.fixer_name}\n" + render_table(headers, rows))
    return "\n".join(blocks)


def axis_table(
    labels: Sequence[str], scores: Mapping[str, Mapping[str, float | None]]
) -> tuple[list[str], list[list[str]]]:
    """Per-fixer scores across one axis's settings (fixers sorted by the
    first setting, descending)."""
    headers = ["fixer"] + list(labels)
    def sort_key(name: str):
        first = scores[name].get(labels[0])
        return (-(first if first is not None else -1.0), name)
    rows = [
        [name] + [_pct(scores[name].get(label)) for label in labels]
        for name in sorted(scores, key=sort_key)
    ]
    return headers, rows


def write_tables(
    run_dir: Path, reports: Mapping[str, MetricReport], *, gate_label: str = ""
) -> dict[str, str]:
    """Render and persist the standard per-run tables; returns name -> text."""
    tables_dir = Path(run_dir) / "tables"
    tables_dir.mkdir(exist_ok=True)
    suffix = f"_p{gate_label}" if gate_label else ""
    out: dict[str, str] = {}
    for name, (headers, rows) in (
        ("metric_snapshot", metric_snapshot_table(reports)),
        ("fix_rate_by_bucket", fix_rate_table(reports)),
        ("stagnation", stagnation_table(reports)),
    ):
        text = render_table(headers, rows)
        out[name] = text
        (tables_dir / f"{name}{suffix}.txt").write_text(text)
        (tables_dir / f"{name}{suffix}.tsv").write_text(render_tsv(headers, rows))
    transitions = transition_tables(reports)
    out["transition_matrices"] = transitions
    (tables_dir / f"transition_matrices{suffix}.txt").write_text(transitions)
    return out
