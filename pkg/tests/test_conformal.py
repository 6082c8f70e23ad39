import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bccp.conformal import (
    ExpertBank,
    QuantileBank,
    ThresholdTrace,
    aggregate_quantile,
    expert_step,
    expert_weights,
    predict_set,
    quantile_step,
    realized_check_loss,
)
from bccp.core_math import InvalidInputError


# ---------------------------------------------------------------- sets

def test_zero_thresholds_full_set():
    assert predict_set([0.3, 0.0, 0.7], np.zeros(3)).members == {0, 1, 2}


def test_elementwise_comparison():
    ps = predict_set([0.9, 0.04, 0.2], [0.5, 0.05, 0.1])
    assert ps.members == {0, 2} and len(ps) == 2 and 0 in ps


def test_inclusive_boundary():
    assert len(predict_set([0.3, 0.4], [0.3, 0.4])) == 2


def test_length_mismatch():
    with pytest.raises(InvalidInputError):
        predict_set([0.1, 0.2], [0.0])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.data())
def test_lowering_threshold_is_monotone(scores, data):
    K = len(scores)
    tau = np.array(data.draw(st.lists(st.floats(0, 1), min_size=K, max_size=K)))
    k = data.draw(st.integers(0, K - 1))
    lower = tau.copy()
    lower[k] -= data.draw(st.floats(0, 1))
    assert predict_set(scores, tau).members <= predict_set(scores, lower).members


# ---------------------------------------------------------------- single rate

def test_quantile_step_no_feedback():
    bank = QuantileBank(2, 0.05, 0.1, np.array([0.5, 0.2]))
    np.testing.assert_array_equal(quantile_step(bank, 0, 0.9, 0.0).tau, [0.5, 0.2])


@pytest.mark.parametrize("s,expected", [(0.6, 0.51), (0.4, 0.31)])
def test_quantile_step_arithmetic(s, expected):
    bank = QuantileBank(1, 0.05, 0.1, np.array([0.5]))
    new = quantile_step(bank, 0, s, 2.0)
    assert new.tau[0] == pytest.approx(expected, abs=1e-15)
    assert bank.tau[0] == 0.5  # functional form leaves the input alone


def test_quantile_bank_starts_at_zero():
    np.testing.assert_array_equal(QuantileBank(4, 0.1, 0.01).thresholds(), np.zeros(4))


def test_quantile_bank_validation():
    with pytest.raises(InvalidInputError):
        QuantileBank(2, 1.0, 0.1)
    with pytest.raises(InvalidInputError):
        QuantileBank(2, 0.1, 0.0)


# ---------------------------------------------------------------- experts

def test_initial_weights_uniform():
    bank = ExpertBank(3, 0.05, [0.1, 0.01, 0.001, 0.0001])
    np.testing.assert_allclose(expert_weights(bank, 1), [0.25] * 4)


def test_equal_losses_uniform_weights():
    bank = ExpertBank(1, 0.05, [0.1, 0.01], losses=np.array([[3.0], [3.0]]), t=9)
    np.testing.assert_allclose(expert_weights(bank, 0), [0.5, 0.5])


def test_weights_known_value():
    bank = ExpertBank(1, 0.05, [0.1, 0.01], losses=np.array([[0.0], [10.0]]), t=0)
    w = expert_weights(bank, 0)
    assert w[0] == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-9)
    assert w[0] == pytest.approx(0.9999546, abs=1e-7)
    assert w[1] == pytest.approx(4.54e-5, rel=1e-3)


def test_weights_survive_huge_losses():
    bank = ExpertBank(1, 0.05, [0.1, 0.01], losses=np.array([[1e6], [1e6 + 1]]), t=0)
    w = expert_weights(bank, 0)
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)


def test_aggregate_equal_losses_is_mean():
    bank = ExpertBank(1, 0.05, [0.1, 0.01], taus=np.array([[0.2], [0.6]]))
    assert aggregate_quantile(bank, 0) == pytest.approx(0.4)


def test_aggregate_tracks_dominant_expert():
    bank = ExpertBank(1, 0.05, [0.1, 0.01], taus=np.array([[0.2], [0.6]]),
                      losses=np.array([[20.0], [0.0]]), t=0)
    assert abs(aggregate_quantile(bank, 0) - 0.6) <= 1e-7


def test_aggregate_identical_taus():
    bank = ExpertBank(1, 0.05, [0.1, 0.01, 0.5], taus=np.full((3, 1), 0.37),
                      losses=np.array([[1.0], [4.0], [0.2]]), t=5)
    assert aggregate_quantile(bank, 0) == pytest.approx(0.37, abs=1e-15)


def test_expert_step_no_feedback():
    bank = ExpertBank(2, 0.05, [0.1, 0.01], taus=np.full((2, 2), 0.3))
    new = expert_step(bank, 0, 0.9, 0.0)
    np.testing.assert_array_equal(new.taus, bank.taus)
    np.testing.assert_array_equal(new.losses, bank.losses)
    assert new.t == 1 and bank.t == 0


def test_expert_step_arithmetic():
    bank = ExpertBank(1, 0.05, [0.01, 0.1], taus=np.full((2, 1), 0.5))
    new = expert_step(bank, 0, 0.6, 2.0)
    assert new.taus[0, 0] == pytest.approx(0.501, abs=1e-15)
    assert new.losses[0, 0] == pytest.approx(0.01, abs=1e-15)
    # loss uses the pre-update threshold, so both experts pay the same
    assert new.losses[1, 0] == pytest.approx(0.01, abs=1e-15)


def test_expert_step_alpha_is_fixed():
    bank = ExpertBank(1, 0.05, [0.01, 0.1])
    with pytest.raises(InvalidInputError):
        expert_step(bank, 0, 0.5, 1.0, alpha=0.1)


def test_single_expert_rejected():
    with pytest.raises(InvalidInputError):
        ExpertBank(2, 0.05, [0.1])


def test_two_equal_experts_reduce_to_single_rate():
    rng = np.random.default_rng(0)
    K, eta = 3, 0.05
    single = QuantileBank(K, 0.1, eta)
    pair = ExpertBank(K, 0.1, [eta, eta])
    for _ in range(2000):
        k = int(rng.integers(K))
        s = float(rng.random())
        d = float(rng.choice([0.0, 3.0]))
        np.testing.assert_array_equal(pair.aggregate(), single.tau)
        single.step(k, s, d)
        pair.step(k, s, d)
    np.testing.assert_array_equal(pair.taus[0], single.tau)
    np.testing.assert_array_equal(pair.taus[1], single.tau)


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0, 1), st.sampled_from([0.0, 1.0, 3.0])),
                max_size=80))
def test_aggregate_within_expert_hull(steps):
    bank = ExpertBank(3, 0.1, [0.5, 0.05, 0.005, 0.0005])
    for k, s, d in steps:
        bank.step(k, s, d)
        agg = bank.aggregate()
        assert np.all(agg >= bank.taus.min(axis=0)) and np.all(agg <= bank.taus.max(axis=0))


def test_realized_check_loss():
    assert realized_check_loss(0.6, 0.5, 0.05, 2.0) == pytest.approx(0.01)
    assert realized_check_loss(0.6, 0.5, 0.05, 0.0) == 0.0


def test_trace_file(tmp_path):
    tr = ThresholdTrace()
    tr.add(1, [0.1, 0.2], [0.1, 0.25])
    tr.write(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["t,class,tau,tau_bar", "1,1,0.1,0.1", "1,2,0.2,0.25"]
