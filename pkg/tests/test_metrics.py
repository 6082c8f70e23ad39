import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bccp.conformal import predict_set
from bccp.core_math import InvalidInputError, check_loss
from bccp.metrics import (
    CoverageAccumulator,
    TheoremDiagnostics,
    acum_cvg_extrema,
    bandit_regret,
    coverage_gap,
    expert_regret_bound,
    oracle_tau_star,
    read_key_values,
    read_series,
    record_step,
    thm1_bound,
    write_key_values,
    write_series,
    zeta,
)


def test_record_step_counts():
    acc = CoverageAccumulator(2)
    record_step(acc, predict_set([0.9, 0.1], [0.5, 0.5]), 0)
    assert acc.covered[0] == 1 and acc.total[0] == 1


def test_class_coverage_ratio():
    acc = CoverageAccumulator(2)
    for hit in (True, True, True, False):
        acc.record(1, hit, 1)
    assert acc.class_coverage() == [None, 0.75]


def test_acum_size_mean():
    acc = CoverageAccumulator(3)
    for size in (1, 3, 2):
        acc.record(0, True, size)
    assert acc.acum_size() == 2.0


def test_record_step_label_range():
    with pytest.raises(InvalidInputError):
        record_step(CoverageAccumulator(2), frozenset(), 2)


def test_extrema():
    acc = CoverageAccumulator(4)
    for k, (c, n) in enumerate([(9, 10), (19, 20), (5, 5)]):
        for i in range(n):
            acc.record(k, i < c, 1)
    assert acum_cvg_extrema(acc) == (0.9, 1.0)  # class 4 unseen, ignored


def test_extrema_single_and_empty():
    acc = CoverageAccumulator(3)
    assert acum_cvg_extrema(acc) == (None, None)
    acc.record(1, False, 0)
    assert acum_cvg_extrema(acc) == (0.0, 0.0)


def test_arm_accuracy():
    acc = CoverageAccumulator(2)
    acc.record(0, True, 1, arm=0)
    acc.record(0, True, 1, arm=1)
    assert acc.arm_accuracy() == [0.5, None]


def test_coverage_gap():
    assert coverage_gap(0.05, 0, 40) == pytest.approx(0.05)
    assert coverage_gap(0.05, 5, 100) == pytest.approx(0.0)
    assert coverage_gap(0.05, 7, 100) == pytest.approx(0.02)
    assert coverage_gap(0.05, 0, 0) is None


def test_gap_matches_event_replay():
    rng = np.random.default_rng(0)
    acc = CoverageAccumulator(3)
    missed = np.zeros(3, dtype=int)
    log = []
    for _ in range(500):
        y, hit = int(rng.integers(3)), bool(rng.random() < 0.9)
        acc.record(y, hit, 1)
        missed[y] += not hit
        log.append((y, hit))
    for k in range(3):
        events = [hit for y, hit in log if y == k]
        replay = abs(0.1 - events.count(False) / len(events))
        assert coverage_gap(0.1, int(missed[k]), int(acc.total[k])) == replay


def test_tau_star_values():
    assert oracle_tau_star(np.arange(1, 11) / 10, 0.1) == pytest.approx(0.1)
    assert oracle_tau_star([0.42], 0.05) == 0.42
    assert oracle_tau_star([0.3] * 7, 0.2) == 0.3
    with pytest.raises(InvalidInputError):
        oracle_tau_star([], 0.1)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 0.99))
def test_tau_star_minimises_check_loss(scores, alpha):
    s = np.array(scores)
    obj = lambda t: float(np.sum(check_loss(s, t, alpha)))
    grid = np.linspace(0, 1, 2001)
    best = min(min(obj(t) for t in grid), min(obj(t) for t in s))
    assert obj(oracle_tau_star(s, alpha)) <= best + 1e-9


def test_zeta_known_value():
    lg = math.log(20.0)
    assert zeta(0.25, 100.0, 0.1) == pytest.approx(2 / 0.75 * lg + math.sqrt(200 * lg))


def test_thm1_bound_pieces():
    base = thm1_bound(1000, 0.01, 0.3, 0.25, 4000.0, 0.1, 4)
    first = 0.3 / (0.01 * 1000)
    assert base == pytest.approx(first + zeta(0.25, 4000.0, 0.025) / 1000)
    doubled = thm1_bound(1000, 0.02, 0.3, 0.25, 4000.0, 0.1, 4)
    assert base - doubled == pytest.approx(first / 2)


def test_thm1_bound_shrinks_with_delta():
    vals = [thm1_bound(500, 0.01, 0.2, 0.2, 2500.0, d, 5) for d in (0.01, 0.05, 0.1, 0.5)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_thm1_bound_absent():
    assert thm1_bound(0, 0.01, 0.2, 0.2, 10.0, 0.1, 3) is None
    assert thm1_bound(10, 0.01, 0.2, 0.2, None, 0.1, 3) is None


def test_expert_regret_bound_plug_in():
    assert expert_regret_bound(0.25, 10_000, 4) == pytest.approx(0.04 + 2 * math.log(4) / 100)
    assert expert_regret_bound(0.25, 10_000, 4) == pytest.approx(0.0677, abs=5e-5)


def test_regret_zero_for_oracle_threshold():
    scores = [0.2, 0.5, 0.9, 0.4]
    diag = TheoremDiagnostics(1, 0.25)
    diag.score_log[0].extend(scores)
    tau_star = oracle_tau_star(scores, 0.25)
    diag.bandit_loss[0] = float(np.sum(check_loss(np.array(scores), tau_star, 0.25)))
    assert bandit_regret(diag, 0, len(scores)) == pytest.approx(0.0)


def test_regret_absent_without_log():
    assert bandit_regret(TheoremDiagnostics(2, 0.1, log_scores=False), 0, 10) is None


def test_series_roundtrip(tmp_path):
    series = {"step": [1, 2], "a": [0.5, None]}
    write_series(tmp_path / "s.csv", ["step", "a"], series)
    assert (tmp_path / "s.csv").read_text() == "step,a\n1,0.5\n2,NA\n"
    assert read_series(tmp_path / "s.csv") == {"step": [1.0, 2.0], "a": [0.5, None]}


def test_key_values_roundtrip(tmp_path):
    vals = {"seed": 3, "x": 0.1, "name": "alg1", "gap": None}
    write_key_values(tmp_path / "k.txt", vals)
    assert read_key_values(tmp_path / "k.txt") == vals
