"""Command-line surface.

Subcommands: validate (corpus checks), run (default-protocol evaluation),
sweep (one-axis OAT plan), analyze (metrics from a stored result
directory), report (tables plus the evaluation card), simulate
(scripted-fixer smoke run on the shipped synthetic corpus).

Exit status: 0 success, 1 evaluation errors, 2 configuration errors
(including unknown flags, via argparse).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from .backend import BackendHandle, normalize_backend_kind
from .corpus import LoadedCorpus, load_corpus, validate_task
from .desk_corpus import FIXERS_FILE, generate_desk_corpus
from .errors import ConfigurationError, EvaluationError, FixerbenchError
from .feedback import FeedbackLevel
from .fixer import SCRIPTED, FixerClient, FixerConfig
from .loop import ProtocolConfig, run_phase_schedule
from .metrics import outcomes_from_trajectories
from .report import (
    RunWriter,
    load_run,
    make_run_dir,
    render_table,
    render_tsv,
    reports_from_run,
    axis_table,
    metric_snapshot_table,
    write_tables,
)
from .robustness import (
    AxisSweepPlan,
    emit_evaluation_card,
    rank_fixers,
    sweep_swings,
    sweep_tau_versus_default,
)


def load_fixer_configs(path: str | Path) -> list[FixerConfig]:
    """Read a fixer panel file; scripted endpoints resolve relative to it."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"fixer config not found: {path}")
    doc = yaml.safe_load(path.read_text()) or {}
    configs = []
    for entry in doc.get("fixers", []):
        cfg = FixerConfig(**entry)
        if cfg.kind == SCRIPTED and cfg.endpoint and not Path(cfg.endpoint).is_absolute():
            cfg.endpoint = str(path.parent / cfg.endpoint)
        configs.append(cfg)
    if not configs:
        raise ConfigurationError(f"no fixers defined in {path}")
    return configs


def _add_protocol_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gate", "-p", type=float, default=None, help="performance-gate threshold p")
    parser.add_argument("--k", type=int, default=None, help="iteration budget K")
    parser.add_argument("--history", type=int, default=None, help="history depth H (1..4)")
    parser.add_argument("--level", default=None, help="feedback level L0|L1|L2|L3|L3_raw|L4")
    parser.add_argument("--sampling", choices=["iterative", "repeated"], default=None)
    parser.add_argument("--temperature", "-T", type=float, default=None)


def _protocol_from_args(args: argparse.Namespace) -> ProtocolConfig:
    defaults = ProtocolConfig()
    return ProtocolConfig(
        k_budget=args.k if args.k is not None else defaults.k_budget,
        history_depth=args.history if args.history is not None else defaults.history_depth,
        feedback_level=FeedbackLevel.parse(args.level) if args.level else defaults.feedback_level,
        sampling=args.sampling or defaults.sampling,
        perf_gate_p=args.gate if args.gate is not None else defaults.perf_gate_p,
        temperature=args.temperature,
    )


def _handle_factory(args: argparse.Namespace, workdir: Path):
    lock = Path(args.gpu_lock) if getattr(args, "gpu_lock", None) else None

    def factory(spec, broken) -> BackendHandle:
        return BackendHandle(
            kind=normalize_backend_kind(spec.backend),
            workdir=workdir,
            build_timeout_s=args.build_timeout,
            test_timeout_s=args.test_timeout,
            gpu_lock_path=lock,
        )

    return factory


def _load_checked_corpus(root: str | Path) -> LoadedCorpus:
    corpus = load_corpus(root)
    for error in corpus.errors:
        print(f"load error: {error}", file=sys.stderr)
    return corpus


def _evaluate(
    cfg: ProtocolConfig,
    fixers: list[FixerConfig],
    corpus: LoadedCorpus,
    run_dir: Path,
    factory,
    concurrency: int,
):
    writer = RunWriter(run_dir, cfg, fixers, corpus)
    clients = [FixerClient(f) for f in fixers]

    def one(client: FixerClient):
        return run_phase_schedule(
            cfg, client, corpus.tasks, factory, recorder=writer
        )

    if concurrency > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(one, clients))
    else:
        results = [one(c) for c in clients]
    writer.finalize()

    call_reports = {}
    trajectories = {}
    for client, (trajs, calls) in zip(clients, results):
        trajectories[client.name] = trajs
        call_reports[client.name] = calls
    return writer, trajectories, call_reports


def _print_run_summary(run_dir: Path, gate: float | None = None) -> None:
    run = load_run(run_dir)
    reports = reports_from_run(run, gate_p=gate)
    tables = write_tables(
        run_dir, reports, gate_label=f"{gate:g}" if gate is not None else ""
    )
    print(tables["metric_snapshot"])


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_validate(args) -> int:
    corpus = _load_checked_corpus(args.corpus)
    factory = _handle_factory(args, Path(args.results) / "workspaces")
    gate = args.gate if args.gate is not None else ProtocolConfig().perf_gate_p
    status = 0 if not corpus.errors else 1
    for spec, broken in corpus.tasks:
        verdict = validate_task(spec, broken, factory(spec, broken), gate_p=gate)
        if verdict.unverifiable:
            print(f"{spec.task_id}: unverifiable ({verdict.reason})")
            continue
        label = ",".join(verdict.categories)
        if verdict.reproducible:
            print(f"{spec.task_id}: reproducible ({label})")
        else:
            print(f"{spec.task_id}: NOT reproducible ({verdict.reason}; saw {label})")
            status = 1
    print(f"{len(corpus.tasks)} tasks checked, {len(corpus.errors)} load errors")
    return status


def _cmd_run(args) -> int:
    corpus = _load_checked_corpus(args.corpus)
    if not corpus.tasks:
        raise EvaluationError("corpus contains no loadable tasks")
    fixers = load_fixer_configs(args.fixers)
    cfg = _protocol_from_args(args)
    run_dir = make_run_dir(args.results, "run")
    factory = _handle_factory(args, run_dir / "workspaces")
    _, _, call_reports = _evaluate(cfg, fixers, corpus, run_dir, factory, args.concurrency)
    for name, calls in sorted(call_reports.items()):
        print(
            f"{name}: {calls.total_calls} fixer calls "
            f"(budget {calls.budget}, phase-1 failures {calls.phase1_failures})"
        )
    _print_run_summary(run_dir)
    print(f"result directory: {run_dir}")
    return 0


def _cmd_simulate(args) -> int:
    run_dir = make_run_dir(args.results, "simulate")
    if args.corpus:
        corpus_root = Path(args.corpus)
    else:
        corpus_root = generate_desk_corpus(args.seed, run_dir / "desk-corpus")
    corpus = _load_checked_corpus(corpus_root)
    fixers = load_fixer_configs(corpus_root / FIXERS_FILE)
    cfg = _protocol_from_args(args)
    factory = _handle_factory(args, run_dir / "workspaces")
    _, _, call_reports = _evaluate(cfg, fixers, corpus, run_dir, factory, args.concurrency)
    for name, calls in sorted(call_reports.items()):
        print(
            f"{name}: {calls.total_calls} fixer calls "
            f"(budget {calls.budget}, phase-1 failures {calls.phase1_failures})"
        )
    _print_run_summary(run_dir)
    print(f"result directory: {run_dir}")
    return 0


def _cmd_analyze(args) -> int:
    _print_run_summary(Path(args.run), gate=args.gate)
    return 0


def _cmd_sweep(args) -> int:
    corpus = _load_checked_corpus(args.corpus)
    if not corpus.tasks:
        raise EvaluationError("corpus contains no loadable tasks")
    fixers = load_fixer_configs(args.fixers)
    cfg = _protocol_from_args(args)
    plan = AxisSweepPlan.default_plan(args.axis, cfg)
    sweep_dir = make_run_dir(args.results, f"sweep-{args.axis}")
    factory = _handle_factory(args, sweep_dir / "workspaces")
    clients = [FixerClient(f) for f in fixers]

    from .robustness import run_oat_sweep

    result = run_oat_sweep(plan, clients, corpus.tasks, factory)

    headers, rows = axis_table(result.labels, result.per_fixer_scores())
    table = render_table(headers, rows)
    (sweep_dir / "axis_scores.txt").write_text(table)
    (sweep_dir / "axis_scores.tsv").write_text(render_tsv(headers, rows))

    swings = sweep_swings(result)
    tau, tau_note = sweep_tau_versus_default(result)
    summary = {
        "axis": result.axis,
        "labels": result.labels,
        "default_label": result.default_label,
        "scores": {
            label: {k: v for k, v in result.scores(label).items()}
            for label in result.labels
        },
        "swing_pp": swings,
        "tau_vs_default": tau,
        "tau_note": tau_note,
        "fixer_calls": result.fixer_calls,
    }
    (sweep_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    default_reports = result.reports[result.default_label]
    card_text, card_doc = emit_evaluation_card(
        default_reports,
        [result],
        corpus_id=corpus.corpus_id,
        corpus_fingerprint=corpus.fingerprint(),
        cfg=cfg,
        fixers={f.name: f for f in fixers},
    )
    (sweep_dir / "card.txt").write_text(card_text)
    (sweep_dir / "card.json").write_text(json.dumps(card_doc, indent=2, sort_keys=True) + "\n")

    print(table)
    for name in sorted(swings):
        value = swings[name]
        print(f"swing[{name}] = {'---' if value is None else f'{value:.1f} pp'}")
    if tau is not None:
        print(f"Kendall tau vs default: {tau:.2f}")
    print(f"sweep directory: {sweep_dir}")
    return 0


def _cmd_report(args) -> int:
    run = load_run(Path(args.run))
    gate = args.gate
    reports = reports_from_run(run, gate_p=gate)
    tables = write_tables(
        run.run_dir, reports, gate_label=f"{gate:g}" if gate is not None else ""
    )
    for name in ("metric_snapshot", "fix_rate_by_bucket", "stagnation"):
        print(tables[name])

    sweeps: list = []
    card_sweep_docs = []
    for sweep_dir in args.sweep or []:
        summary = json.loads((Path(sweep_dir) / "summary.json").read_text())
        card_sweep_docs.append(summary)

    cfg = run.protocol
    fixer_cfgs = {
        f["name"]: FixerConfig(
            name=f["name"],
            kind=f.get("kind", "scripted"),
            endpoint=f.get("endpoint", ""),
            is_source_model=bool(f.get("is_source_model", False)),
        )
        for f in run.config.get("fixers", [])
    }
    card_text, card_doc = emit_evaluation_card(
        reports,
        sweeps,
        corpus_id=run.config.get("corpus", {}).get("id", "unknown"),
        corpus_fingerprint=run.config.get("corpus", {}).get("sha256", ""),
        cfg=cfg,
        fixers=fixer_cfgs,
    )
    if card_sweep_docs:
        card_doc["sweeps"] = card_sweep_docs
        extra_lines = []
        for summary in card_sweep_docs:
            extra_lines.append(f"axis {summary['axis']} (from stored sweep):")
            for name, value in sorted((summary.get("swing_pp") or {}).items()):
                shown = "---" if value is None else f"{value:.1f} pp"
                extra_lines.append(f"  swing[{name}] = {shown}")
            if summary.get("tau_vs_default") is not None:
                extra_lines.append(
                    f"  Kendall tau vs default: {summary['tau_vs_default']:.2f}"
                )
        card_text = card_text + "\n".join(extra_lines) + ("\n" if extra_lines else "")
    (run.run_dir / "card.txt").write_text(card_text)
    (run.run_dir / "card.json").write_text(
        json.dumps(card_doc, indent=2, sort_keys=True) + "\n"
    )
    print(card_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixerbench",
        description="Protocol-conditional evaluation harness for debug-loop fixers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, corpus_required: bool = True) -> None:
        p.add_argument("--corpus", required=corpus_required, help="corpus root directory")
        p.add_argument("--results", default="results", help="result root directory")
        p.add_argument("--concurrency", type=int, default=1)
        p.add_argument("--gpu-lock", default=None, help="advisory GPU lock file path")
        p.add_argument("--build-timeout", type=int, default=300)
        p.add_argument("--test-timeout", type=int, default=120)

    p = sub.add_parser("validate", help="check corpus manifests and reproducibility")
    common(p)
    p.add_argument("--gate", "-p", type=float, default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="default-protocol evaluation")
    common(p)
    p.add_argument("--fixers", required=True, help="fixer panel YAML")
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="one-at-a-time axis sweep")
    common(p)
    p.add_argument("--fixers", required=True)
    p.add_argument("--axis", required=True, choices=["A1", "A2", "A3", "A4"])
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="recompute metrics from a result directory")
    p.add_argument("--run", required=True, help="stored result directory")
    p.add_argument("--gate", "-p", type=float, default=None, help="re-apply gate post hoc")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="tables plus the evaluation card")
    p.add_argument("--run", required=True)
    p.add_argument("--sweep", action="append", help="stored sweep directory (repeatable)")
    p.add_argument("--gate", "-p", type=float, default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("simulate", help="scripted-fixer smoke run on the desk corpus")
    common(p, corpus_required=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixers", default=None, help="override fixer panel YAML")
    _add_protocol_flags(p)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FixerbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
