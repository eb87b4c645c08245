"""Protocol-axis sweeps and ranking-stability analytics.

One-at-a-time (OAT) sweeps vary a single axis while pinning the others at
defaults. Swing is the max-min score range over an axis's settings, a
lower bound on the full protocol-induced variation. Kendall tau compares
the fixer ranking at two settings; the closed-form z-criterion
(z >= 1.645) declares an individual two-fixer flip resolved. The gate
axis never re-executes anything: stored speedups are re-gated post hoc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from .backend import BackendHandle
from .errors import ConfigurationError
from .feedback import FeedbackLevel
from .loop import (
    ITERATIVE,
    REPEATED,
    CallCountReport,
    ProtocolConfig,
    run_phase_schedule,
)
from .metrics import (
    MetricReport,
    TaskOutcome,
    build_metric_report,
    outcomes_from_trajectories,
)

if TYPE_CHECKING:
    from .corpus import BrokenStart, TaskSpec
    from .fixer import FixerClient

AXES = ("A1", "A2", "A3", "A4")

A1_SETTINGS: tuple[float, ...] = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.5)
A2_SETTINGS: tuple[str, ...] = (ITERATIVE, REPEATED)
A3_SETTINGS: tuple[FeedbackLevel, ...] = (
    FeedbackLevel.L0,
    FeedbackLevel.L1,
    FeedbackLevel.L2,
    FeedbackLevel.L3,
    FeedbackLevel.L3_RAW,
)
A4_SETTINGS: tuple[int, ...] = (1, 2, 3, 4)

Z_RESOLVED = 1.645


def setting_label(axis: str, setting) -> str:
    if axis == "A1":
        return f"p={setting:g}"
    if axis == "A2":
        return str(setting)
    if axis == "A3":
        return setting.value if isinstance(setting, FeedbackLevel) else str(setting)
    return f"H={setting}"


@dataclass(frozen=True)
class AxisSweepPlan:
    """Ordered settings for exactly one varying axis; everything else pinned."""

    axis: str
    settings: tuple
    defaults: ProtocolConfig

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigurationError(f"unknown axis {self.axis!r}")
        if len(self.settings) < 1:
            raise ConfigurationError("sweep needs at least one setting")

    @classmethod
    def default_plan(
        cls,
        axis: str,
        defaults: ProtocolConfig | None = None,
        include_l4: bool = False,
    ) -> "AxisSweepPlan":
        defaults = defaults or ProtocolConfig()
        settings: tuple
        if axis == "A1":
            settings = A1_SETTINGS
        elif axis == "A2":
            settings = A2_SETTINGS
        elif axis == "A3":
            settings = A3_SETTINGS + ((FeedbackLevel.L4,) if include_l4 else ())
        elif axis == "A4":
            settings = A4_SETTINGS
        else:
            raise ConfigurationError(f"unknown axis {axis!r}")
        return cls(axis=axis, settings=settings, defaults=defaults)

    def config_for(self, setting) -> ProtocolConfig:
        if self.axis == "A1":
            return replace(self.defaults, perf_gate_p=float(setting))
        if self.axis == "A2":
            # Repeated sampling runs at T=1.0, iterative at the fixer default.
            return replace(self.defaults, sampling=str(setting), temperature=None)
        if self.axis == "A3":
            return replace(self.defaults, feedback_level=FeedbackLevel.parse(setting))
        return replace(self.defaults, history_depth=int(setting))

    def labels(self) -> list[str]:
        return [setting_label(self.axis, s) for s in self.settings]

    def default_label(self) -> str:
        if self.axis == "A1":
            return setting_label("A1", self.defaults.perf_gate_p)
        if self.axis == "A2":
            return setting_label("A2", self.defaults.sampling)
        if self.axis == "A3":
            return setting_label("A3", self.defaults.feedback_level)
        return setting_label("A4", self.defaults.history_depth)


@dataclass(frozen=True)
class RankingVector:
    """Fixers ordered by descending pass@k; ties broken by ascending name."""

    setting: str
    fixers: tuple[str, ...]


def rank_fixers(scores: Mapping[str, float | None], setting: str) -> RankingVector:
    scored = {name: s for name, s in scores.items() if s is not None}
    ordered = sorted(scored, key=lambda name: (-scored[name], name))
    return RankingVector(setting=setting, fixers=tuple(ordered))


def kendall_tau(r1: RankingVector, r2: RankingVector) -> float:
    """Pairwise concordance: (concordant - discordant) / (n(n-1)/2)."""
    if set(r1.fixers) != set(r2.fixers):
        raise ConfigurationError("rankings cover different fixer panels")
    n = len(r1.fixers)
    if n < 2:
        raise ConfigurationError("kendall_tau needs at least two fixers")
    pos1 = {name: i for i, name in enumerate(r1.fixers)}
    pos2 = {name: i for i, name in enumerate(r2.fixers)}
    names = list(r1.fixers)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            a, b = names[i], names[j]
            d1 = pos1[a] - pos1[b]
            d2 = pos2[a] - pos2[b]
            if d1 * d2 > 0:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (n * (n - 1) / 2)


def swing(scores: "Mapping | Sequence[float]") -> float:
    """max - min over one axis's settings, in the units of the inputs."""
    values = list(scores.values()) if isinstance(scores, Mapping) else list(scores)
    values = [v for v in values if v is not None]
    if len(values) < 2:
        raise ConfigurationError("swing needs at least two settings")
    return max(values) - min(values)


@dataclass(frozen=True)
class FlipResolution:
    """Closed-form resolution check for one two-fixer ranking flip."""

    mu: float
    sigma: float
    mu_prime: float
    sigma_prime: float
    z: float
    rho: float  # probability the observed ordering matches the true one
    resolved: bool  # z >= 1.645
    defined: bool = True


def flip_resolution(
    mu: float, sigma: float, mu_prime: float, sigma_prime: float
) -> FlipResolution:
    """z = |mu - mu'| / sqrt(sigma^2 + sigma'^2); rho = (1 + erf(z/sqrt 2))/2."""
    var = sigma**2 + sigma_prime**2
    if var == 0:
        if mu == mu_prime:
            return FlipResolution(
                mu=mu,
                sigma=sigma,
                mu_prime=mu_prime,
                sigma_prime=sigma_prime,
                z=0.0,
                rho=0.5,
                resolved=False,
                defined=False,
            )
        z = math.inf
    else:
        z = abs(mu - mu_prime) / math.sqrt(var)
    rho = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return FlipResolution(
        mu=mu,
        sigma=sigma,
        mu_prime=mu_prime,
        sigma_prime=sigma_prime,
        z=z,
        rho=rho,
        resolved=z >= Z_RESOLVED,
    )


# ---------------------------------------------------------------------------
# OAT sweep execution


@dataclass
class SweepResult:
    axis: str
    labels: list[str]
    default_label: str
    reports: dict[str, dict[str, MetricReport]]  # label -> fixer -> report
    call_reports: dict[str, dict[str, CallCountReport]] = field(default_factory=dict)
    fixer_calls: int = 0  # calls issued by the sweep itself

    def scores(self, label: str) -> dict[str, float | None]:
        return {name: r.pass_at_k for name, r in self.reports[label].items()}

    def per_fixer_scores(self) -> dict[str, dict[str, float | None]]:
        out: dict[str, dict[str, float | None]] = {}
        for label in self.labels:
            for name, report in self.reports[label].items():
                out.setdefault(name, {})[label] = report.pass_at_k
        return out


def run_oat_sweep(
    plan: AxisSweepPlan,
    fixers: Sequence["FixerClient"],
    tasks: Sequence[tuple["TaskSpec", "BrokenStart"]],
    backend: "BackendHandle | Callable",
    *,
    recorder_factory: Callable[[str, str], object] | None = None,
    stored_outcomes: Mapping[str, Sequence[TaskOutcome]] | None = None,
) -> SweepResult:
    """One full evaluation per setting of the plan's axis.

    Gate sweeps (A1) re-apply the gate to stored speedups and never call a
    fixer; when stored_outcomes is absent the default protocol is run once
    to obtain them. A2-A4 re-run the loops at each non-default setting.
    """
    result = SweepResult(
        axis=plan.axis,
        labels=plan.labels(),
        default_label=plan.default_label(),
        reports={},
    )
    calls_before = sum(f.calls for f in fixers)
    specs = [spec for spec, _ in tasks]

    if plan.axis == "A1":
        outcomes_by_fixer: dict[str, Sequence[TaskOutcome]] = dict(stored_outcomes or {})
        for client in fixers:
            if client.name in outcomes_by_fixer:
                continue
            trajectories, _ = run_phase_schedule(plan.defaults, client, tasks, backend)
            outcomes_by_fixer[client.name] = outcomes_from_trajectories(
                trajectories, specs
            )
        for setting in plan.settings:
            label = setting_label("A1", setting)
            result.reports[label] = {
                client.name: build_metric_report(
                    list(outcomes_by_fixer[client.name]),
                    client.cfg,
                    k=plan.defaults.k_budget,
                    gate_p=float(setting),
                    reapply_gate=True,
                )
                for client in fixers
            }
        result.fixer_calls = sum(f.calls for f in fixers) - calls_before
        return result

    for setting in plan.settings:
        label = setting_label(plan.axis, setting)
        cfg = plan.config_for(setting)
        result.reports[label] = {}
        result.call_reports[label] = {}
        for client in fixers:
            recorder = (
                recorder_factory(label, client.name) if recorder_factory else None
            )
            kwargs = {"recorder": recorder} if recorder else {}
            trajectories, call_report = run_phase_schedule(
                cfg, client, tasks, backend, **kwargs
            )
            outcomes = outcomes_from_trajectories(trajectories, specs)
            result.reports[label][client.name] = build_metric_report(
                outcomes, client.cfg, k=cfg.k_budget, gate_p=cfg.perf_gate_p
            )
            result.call_reports[label][client.name] = call_report
    result.fixer_calls = sum(f.calls for f in fixers) - calls_before
    return result


# ---------------------------------------------------------------------------
# Evaluation card


def _full_coverage_panel(sweep: SweepResult) -> tuple[list[str], list[str]]:
    """Fixers scored at every setting, and the excluded remainder."""
    per_fixer = sweep.per_fixer_scores()
    covered = [
        name
        for name, scores in per_fixer.items()
        if all(scores.get(label) is not None for label in sweep.labels)
    ]
    excluded = sorted(set(per_fixer) - set(covered))
    return sorted(covered), excluded


def _comparison_ranking(
    sweep: SweepResult, panel: list[str]
) -> tuple[str, RankingVector]:
    """Ranking compared against the default: the other setting on two-point
    axes, the per-fixer best setting otherwise."""
    if len(sweep.labels) == 2:
        other = next(l for l in sweep.labels if l != sweep.default_label)
        scores = {n: s for n, s in sweep.scores(other).items() if n in panel}
        return other, rank_fixers(scores, other)
    per_fixer = sweep.per_fixer_scores()
    best = {
        name: max(v for v in per_fixer[name].values() if v is not None)
        for name in panel
    }
    return "best", rank_fixers(best, f"best-{sweep.axis}")


def sweep_swings(sweep: SweepResult) -> dict[str, float | None]:
    """Per-fixer swing over the axis settings, in percentage points."""
    swings: dict[str, float | None] = {}
    for name, scores in sweep.per_fixer_scores().items():
        values = [v * 100.0 for v in scores.values() if v is not None]
        swings[name] = (max(values) - min(values)) if len(values) >= 2 else None
    return swings


def sweep_tau_versus_default(sweep: SweepResult) -> tuple[float | None, dict]:
    """Kendall tau between the default ranking and the comparison ranking,
    computed on the full-coverage fixer subset."""
    panel, excluded = _full_coverage_panel(sweep)
    note: dict = {"panel": panel, "excluded": excluded}
    if sweep.default_label not in sweep.reports or len(panel) < 2:
        return None, note
    default_scores = {
        n: s for n, s in sweep.scores(sweep.default_label).items() if n in panel
    }
    default_ranking = rank_fixers(default_scores, sweep.default_label)
    comparison_label, comparison = _comparison_ranking(sweep, panel)
    note["comparison"] = comparison_label
    return kendall_tau(default_ranking, comparison), note


def emit_evaluation_card(
    default_reports: Mapping[str, MetricReport],
    sweeps: Sequence[SweepResult],
    *,
    corpus_id: str,
    corpus_fingerprint: str,
    cfg: ProtocolConfig,
    fixers: Mapping[str, "object"],
) -> tuple[str, dict]:
    """Disclosure card for every reported pass@k: fixer, corpus, the full
    axis vector, budgets, asymmetric-rule applicability, swing and tau.

    Returns (formatted text, machine-readable dict).
    """
    if not default_reports:
        raise ConfigurationError("evaluation card needs the default-protocol report")

    doc: dict = {
        "corpus": {"id": corpus_id, "sha256": corpus_fingerprint},
        "protocol": cfg.to_dict(),
        "headline": [],
        "sweeps": [],
    }
    lines = [
        "EVALUATION CARD",
        f"corpus: {corpus_id} (sha256 {corpus_fingerprint[:16]})",
        (
            f"protocol: p={cfg.perf_gate_p:g} sampling={cfg.sampling} "
            f"feedback={cfg.feedback_level.value} H={cfg.history_depth} K={cfg.k_budget}"
        ),
        "",
        "headline pass@k (asymmetric rule on self-source tasks):",
    ]
    for name in sorted(default_reports):
        report = default_reports[name]
        fixer_cfg = fixers.get(name)
        asymmetric = bool(getattr(fixer_cfg, "is_source_model", False))
        temperature = cfg.effective_temperature(fixer_cfg) if fixer_cfg else None
        row = {
            "fixer": name,
            "k": report.k,
            "pass_at_k": report.pass_at_k,
            "pass_at_k_symmetric": report.pass_at_k_symmetric,
            "gate_p": report.gate_p,
            "temperature": temperature,
            "asymmetric_rule_applies": asymmetric,
            "n_tasks": report.n_tasks,
        }
        doc["headline"].append(row)
        shown = "---" if report.pass_at_k is None else f"{report.pass_at_k * 100:.1f}%"
        t_shown = "---" if temperature is None else f"{temperature:g}"
        lines.append(
            f"  {name}: pass@{report.k}={shown} (T={t_shown}, "
            f"asymmetric={'yes' if asymmetric else 'no'}, n={report.n_tasks})"
        )

    for sweep in sweeps:
        swings = sweep_swings(sweep)
        tau, note = sweep_tau_versus_default(sweep)
        one_sided = sweep.default_label in (sweep.labels[0], sweep.labels[-1])
        entry = {
            "axis": sweep.axis,
            "settings": sweep.labels,
            "default": sweep.default_label,
            "swing_pp": swings,
            "tau_vs_default": tau,
            "tau_note": note,
            "one_sided_sweep": one_sided,
        }
        doc["sweeps"].append(entry)
        lines.append("")
        lines.append(f"axis {sweep.axis} ({', '.join(sweep.labels)}):")
        for name in sorted(swings):
            value = swings[name]
            shown = "---" if value is None else f"{value:.1f} pp"
            lines.append(f"  swing[{name}] = {shown}")
        if tau is not None:
            lines.append(
                f"  Kendall tau vs default ({note.get('comparison')}): {tau:.2f}"
            )
        if note.get("excluded"):
            lines.append(
                "  tau computed on the full-coverage subset; excluded: "
                + ", ".join(note["excluded"])
            )
        if one_sided:
            lines.append(
                "  note: default sits at an endpoint of the swept range; swing is one-sided"
            )
    return "\n".join(lines) + "\n", doc
