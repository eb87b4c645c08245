from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from fixerbench.classifier import Bucket, Category
from fixerbench.fixer import FixerConfig
from fixerbench.metrics import (
    CURATION_BUCKETS,
    build_metric_report,
    debug_rate_at_k,
    fix_rate_by_bucket,
    fix_rates,
    pass_at_1,
    pass_at_k_asymmetric,
    pass_at_k_symmetric,
    progression_rate,
    stagnation_rates,
    stagnation_refire_rate,
    transition_matrix,
    unique_approach_ratio,
)

from conftest import make_outcome

M = FixerConfig(name="m", is_source_model=True)
OTHER = FixerConfig(name="other", is_source_model=False)

FAIL = ("buildability", "syntax_error", "h", None)


def passing_at(task_id, index, *, source="manual", speedup=1.0, k=5, stop="passed"):
    iters = [
        ("buildability", f"s{i}", f"{task_id}-h{i}", None) for i in range(index - 1)
    ] + [("passed", "", f"{task_id}-hp", speedup)]
    return make_outcome(task_id, iters, stop, source_model=source)


def failing(task_id, n=5, *, source="manual", stop="max_iterations"):
    iters = [("buildability", f"s{i}", f"{task_id}-h{i}", None) for i in range(n)]
    return make_outcome(task_id, iters, stop, source_model=source)


# -- asymmetric pass@k --------------------------------------------------------


def test_self_source_pass_at_5_drops_fifth_iteration():
    outcome = passing_at("t/1", 5, source="m")
    assert pass_at_k_asymmetric([outcome], M, 5) == 0.0
    assert pass_at_k_symmetric([outcome], 5) == 1.0


def test_cross_source_pass_at_5_unaffected():
    outcome = passing_at("t/1", 5, source="someone-else")
    assert pass_at_k_asymmetric([outcome], M, 5) == 1.0


def test_asymmetric_brute_force_on_mixed_set():
    outcomes = [
        passing_at("t/1", 5, source="m"),  # self, pass@5 -> dropped
        passing_at("t/2", 4, source="m"),  # self, pass@4 -> counts
        passing_at("t/3", 5, source="x"),  # cross -> counts
        failing("t/4", source="x"),
    ]

    def brute(fixer, k):
        hits = 0
        for o in outcomes:
            k_eff = k - 1 if (fixer.is_source_model and o.source_model == fixer.name) else k
            hits += o.passed_at is not None and o.passed_at <= k_eff
        return hits / len(outcomes)

    assert pass_at_k_asymmetric(outcomes, M, 5) == brute(M, 5) == 0.5
    assert pass_at_k_asymmetric(outcomes, OTHER, 5) == brute(OTHER, 5) == 0.75


def test_asymmetric_never_exceeds_symmetric():
    rng = random.Random(3)
    for _ in range(100):
        outcomes = []
        for i in range(rng.randrange(1, 12)):
            source = rng.choice(["m", "x"])
            if rng.random() < 0.5:
                outcomes.append(passing_at(f"t/{i}", rng.randrange(1, 6), source=source))
            else:
                outcomes.append(failing(f"t/{i}", source=source))
        asym = pass_at_k_asymmetric(outcomes, M, 5)
        sym = pass_at_k_symmetric(outcomes, 5)
        assert asym <= sym


def test_pass_at_k_monotone_in_k():
    outcomes = [passing_at(f"t/{i}", i + 1) for i in range(5)] + [failing("t/9")]
    values = [pass_at_k_symmetric(outcomes, k) for k in range(1, 6)]
    assert values == sorted(values)


def test_empty_outcomes_absent():
    assert pass_at_k_asymmetric([], M, 5) is None
    assert pass_at_1([]) is None


# -- debug rate and the decomposition identity --------------------------------


def test_debug_rate_direct_count():
    outcomes = (
        [passing_at(f"t/p{i}", 1) for i in range(4)]  # pass at iteration 1
        + [passing_at(f"t/d{i}", 3) for i in range(3)]  # repaired later
        + [failing(f"t/f{i}") for i in range(3)]
    )
    assert debug_rate_at_k(outcomes, 5) == pytest.approx(0.5)


def test_debug_rate_absent_when_all_pass_first():
    outcomes = [passing_at(f"t/{i}", 1) for i in range(3)]
    assert debug_rate_at_k(outcomes, 5) is None


def test_snapshot_row_recomposes():
    # pass@1 and debug_rate@5 recombine into the headline pass@5.
    p1, dr = 0.145, 0.171
    assert p1 + (1 - p1) * dr == pytest.approx(0.291, abs=0.0005)


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_decomposition_identity_property(data):
    n = data.draw(st.integers(min_value=1, max_value=30))
    outcomes = []
    for i in range(n):
        passed_at = data.draw(
            st.one_of(st.none(), st.integers(min_value=1, max_value=5))
        )
        if passed_at is None:
            outcomes.append(failing(f"t/{i}"))
        else:
            outcomes.append(passing_at(f"t/{i}", passed_at))
    p1 = pass_at_1(outcomes)
    pk = pass_at_k_symmetric(outcomes, 5)
    dr = debug_rate_at_k(outcomes, 5)
    if dr is None:
        assert pk == p1
    else:
        assert pk == pytest.approx(p1 + (1 - p1) * dr, abs=1e-12)


# -- fix rate -----------------------------------------------------------------


def test_fix_rate_basic_counts():
    outcomes = [
        passing_at("t/1", 2, speedup=1.0),
        failing("t/2"),
    ]
    for o in outcomes:
        o.initial_bucket = Bucket.COMPILE_ERROR
    assert fix_rate_by_bucket(outcomes, Bucket.COMPILE_ERROR) == 0.5
    assert fix_rate_by_bucket(outcomes, Bucket.TIMEOUT) is None


def test_fix_rate_all_solved():
    outcomes = [passing_at(f"t/{i}", 1) for i in range(3)]
    for o in outcomes:
        o.initial_bucket = Bucket.LOGIC_ERROR
    assert fix_rate_by_bucket(outcomes, Bucket.LOGIC_ERROR) == 1.0


def test_fix_rate_matches_group_by_oracle():
    rng = random.Random(11)
    outcomes = []
    for i in range(60):
        bucket = rng.choice(list(CURATION_BUCKETS))
        if rng.random() < 0.5:
            o = passing_at(f"t/{i}", rng.randrange(1, 6))
        else:
            o = failing(f"t/{i}")
        o.initial_bucket = bucket
        outcomes.append(o)
    rates = fix_rates(outcomes, gate_p=0.0)
    for bucket in CURATION_BUCKETS:
        members = [o for o in outcomes if o.initial_bucket == bucket]
        if not members:
            assert rates[bucket] is None
            continue
        solved = sum(1 for o in members if o.passed_at_gate(0.0) is not None)
        assert rates[bucket] == pytest.approx(solved / len(members))


def test_fix_rate_gate_zero_credits_slow_passes():
    slow = passing_at("t/slow", 1, speedup=0.5)  # fails the 0.7 gate
    slow.initial_bucket = Bucket.PERF_BROKEN
    assert slow.passed_at is None
    assert fix_rate_by_bucket([slow], Bucket.PERF_BROKEN, gate_p=0.0) == 1.0
    assert fix_rate_by_bucket([slow], Bucket.PERF_BROKEN, gate_p=0.7) == 0.0


# -- stagnation ----------------------------------------------------------------


def test_stagnation_breakdown_counts():
    outcomes = (
        [failing(f"t/n{i}", stop="no_progress") for i in range(7)]
        + [failing("t/d", stop="duplicate_code")]
        + [failing(f"t/m{i}", stop="max_iterations") for i in range(2)]
    )
    breakdown = stagnation_rates(outcomes)
    assert breakdown.n_fail == 10
    assert breakdown.overall == pytest.approx(0.8)
    assert breakdown.per_signal["no_progress"] == pytest.approx(0.7)
    assert breakdown.dominant_signal == "no_progress"
    assert sum(breakdown.per_signal.values()) == pytest.approx(breakdown.overall)


def test_stagnation_absent_without_failures():
    outcomes = [passing_at("t/1", 1)]
    breakdown = stagnation_rates(outcomes)
    assert breakdown.n_fail == 0 and breakdown.overall is None


def test_single_code_cycle_dominates():
    breakdown = stagnation_rates([failing("t/1", stop="code_cycle")])
    assert breakdown.overall == 1.0
    assert breakdown.dominant_signal == "code_cycle"


def test_dominant_tie_breaks_by_precedence():
    outcomes = [
        failing("t/1", stop="no_progress"),
        failing("t/2", stop="duplicate_code"),
    ]
    assert stagnation_rates(outcomes).dominant_signal == "duplicate_code"


def test_stagnation_refire_variants():
    streaky = make_outcome(
        "t/s",
        [
            ("buildability", "s", "h1", None),
            ("buildability", "s", "h2", None),
            ("functional_correctness", "x", "h3", None),
        ],
        "max_iterations",
    )
    assert stagnation_refire_rate([streaky], no_progress_streak=2) == 1.0
    assert stagnation_refire_rate([streaky], no_progress_streak=3) == 0.0
    assert stagnation_refire_rate([streaky], no_progress_streak=4) == 0.0


# -- progression / uniqueness ---------------------------------------------------


def test_progression_forward_move_counts():
    forward = make_outcome(
        "t/f",
        [("buildability", "s", "h1", None), ("functional_correctness", "x", "h2", None)],
        "max_iterations",
    )
    assert progression_rate([forward]) == 1.0


def test_progression_backward_only_does_not_count():
    backward = make_outcome(
        "t/b",
        [("functional_correctness", "x", "h1", None), ("buildability", "s", "h2", None)],
        "max_iterations",
    )
    assert progression_rate([backward]) == 0.0


def test_progression_matches_pairwise_oracle():
    rng = random.Random(5)
    rank = {
        "buildability": 0,
        "integration": 0,
        "environment_dependency": 0,
        "out_of_memory": 1,
        "illegal_memory_access": 1,
        "timeout": 1,
        "functional_correctness": 2,
    }
    cats = list(rank)
    outcomes = []
    for i in range(20):
        seq = [rng.choice(cats) for _ in range(rng.randrange(2, 6))]
        outcomes.append(
            make_outcome(
                f"t/{i}",
                [(c, "s", f"h{i}-{j}", None) for j, c in enumerate(seq)],
                "max_iterations",
            )
        )
    expected = sum(
        1
        for o in outcomes
        if any(
            rank[b.value] > rank[a.value]
            for a, b in zip(
                [it.category for it in o.iterations],
                [it.category for it in o.iterations][1:],
            )
        )
    ) / len(outcomes)
    assert progression_rate(outcomes) == pytest.approx(expected)


def test_unique_approach_ratio():
    distinct = failing("t/1", n=5)
    assert unique_approach_ratio([distinct]) == 1.0
    repeated = make_outcome(
        "t/2",
        [
            ("buildability", "s", "A", None),
            ("buildability", "s2", "B", None),
            ("buildability", "s3", "A", None),
            ("buildability", "s4", "B", None),
        ],
        "code_cycle",
    )
    assert unique_approach_ratio([repeated]) == 0.5


# -- transition matrix -----------------------------------------------------------


def test_transition_single_trajectory():
    outcome = make_outcome(
        "t/1",
        [
            ("buildability", "s", "h1", None),
            ("buildability", "s", "h2", None),
            ("passed", "", "h3", 1.0),
        ],
        "passed",
    )
    matrix = transition_matrix([outcome])
    row = matrix.row(Category.BUILDABILITY)
    assert row[Category.BUILDABILITY] == pytest.approx(0.5)
    assert row[Category.PASSED] == pytest.approx(0.5)


def test_transition_no_repeats_zero_diagonal():
    outcome = make_outcome(
        "t/1",
        [
            ("buildability", "s", "h1", None),
            ("functional_correctness", "x", "h2", None),
            ("out_of_memory", "o", "h3", None),
        ],
        "max_iterations",
    )
    matrix = transition_matrix([outcome])
    for i, _ in enumerate(matrix.categories):
        assert matrix.entries[i][i] == 0.0


def test_transition_rows_with_support_sum_to_one():
    rng = random.Random(13)
    outcomes = []
    for i in range(25):
        seq = [rng.choice(list(Category)) for _ in range(rng.randrange(2, 6))]
        outcomes.append(
            make_outcome(
                f"t/{i}",
                [
                    (c.value, "s", f"h{i}-{j}", 1.0 if c is Category.PASSED else None)
                    for j, c in enumerate(seq)
                ],
                "max_iterations",
            )
        )
    matrix = transition_matrix(outcomes)
    for i in range(len(matrix.categories)):
        support = sum(matrix.support_counts[i])
        total = sum(matrix.entries[i])
        if support:
            assert total == pytest.approx(1.0, abs=1e-9)
        else:
            assert total == 0.0


# -- full report ------------------------------------------------------------------


def test_report_identity_holds_with_asymmetric_budget():
    outcomes = [
        passing_at("t/1", 1),
        passing_at("t/2", 5, source="m"),
        passing_at("t/3", 3),
        failing("t/4"),
        failing("t/5", source="m"),
    ]
    report = build_metric_report(outcomes, M, k=5, gate_p=0.7)
    identity = report.pass_at_1 + (1 - report.pass_at_1) * report.debug_rate_at_k
    assert report.pass_at_k == pytest.approx(identity, abs=1e-12)
    assert report.pass_at_k <= report.pass_at_k_symmetric
