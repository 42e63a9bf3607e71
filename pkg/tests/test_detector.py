import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln, logsumexp

from circadian_cpd import detector
from circadian_cpd.detector import (
    MISSING,
    HazardConfig,
    detect_change_points,
    fpo_detect,
    hazard,
    peo_detect,
    peo_init,
    peo_predictive,
    peo_run,
    peo_step,
    true_run_lengths,
)
from circadian_cpd.errors import NumericalUnderflow
from circadian_cpd.sampler import FpoPriors


def brute_force_joint(labels, gamma, tau):
    """``p(r_T, z_{1:T})`` by summing over every change-indicator path.

    Each run scores its labels with the Dirichlet-Categorical marginal, so
    no predictive ratios or recursion are involved.
    """
    gamma = np.asarray(gamma, dtype=float)
    T, H = len(labels), 1.0 / tau
    joint = np.zeros(T + 1)
    for changes in itertools.product((0, 1), repeat=T):
        logp, start, last_start = 0.0, 0, 0
        for s in range(T):
            logp += np.log(H) if changes[s] else np.log1p(-H)
            if changes[s] or s == T - 1:
                counts = np.bincount(labels[start : s + 1], minlength=gamma.size)
                logp += gammaln(gamma.sum()) - gammaln(gamma.sum() + counts.sum())
                logp += np.sum(gammaln(gamma + counts) - gammaln(gamma))
                last_start, start = start, s + 1
        joint[0 if changes[-1] else T - last_start] += np.exp(logp)
    return joint


# -- hazard and predictive -----------------------------------------------------------


def test_hazard_values():
    assert hazard(0, HazardConfig(100)) == pytest.approx((0.01, 0.99))
    assert hazard(3, HazardConfig(2)) == (0.5, 0.5)
    rng = np.random.default_rng(0)
    cfg = HazardConfig(37.0)
    assert len({hazard(int(r), cfg) for r in rng.integers(0, 10_000, 100)}) == 1
    with pytest.raises(ValueError):
        HazardConfig(1.0)
    with pytest.raises(ValueError):
        hazard(-1, cfg)


def test_peo_predictive_values():
    assert peo_predictive([1, 1, 1], 2) == pytest.approx(1 / 3)
    assert peo_predictive([3, 1], 0) == 0.75
    with pytest.raises(ValueError):
        peo_predictive([1, 0], 0)


def test_peo_predictive_monte_carlo():
    gamma = np.array([2.0, 5.0, 1.0])
    draws = np.random.default_rng(1).dirichlet(gamma, size=10**6)[:, 1]
    assert abs(peo_predictive(gamma, 1) - draws.mean()) < 3 * draws.std(ddof=1) / 1e3


# -- PEO recursion -------------------------------------------------------------------


def test_first_step_splits_by_hazard():
    cfg = HazardConfig(10)
    state = peo_step(peo_init(np.ones(3)), 1, cfg, np.ones(3))
    assert np.allclose(state.posterior(), [0.1, 0.9])


@pytest.mark.parametrize("labels", list(itertools.product((0, 1), repeat=3)))
def test_three_step_posterior_matches_path_enumeration(labels):
    gamma = [1.3, 0.7]
    states = peo_run(labels, gamma, HazardConfig(10))
    for t in range(1, 4):
        oracle = brute_force_joint(np.array(labels[:t]), gamma, 10)
        assert np.allclose(np.exp(states[t - 1].log_joint), oracle, rtol=1e-12, atol=0)


def test_longer_sequence_matches_path_enumeration():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 3, 9)
    gamma = rng.uniform(0.5, 2.0, 3)
    states = peo_run(labels, gamma, HazardConfig(5))
    oracle = brute_force_joint(labels, gamma, 5)
    assert np.allclose(np.exp(states[-1].log_joint), oracle, rtol=1e-11, atol=0)


def test_missing_step_is_pure_hazard_transition():
    cfg = HazardConfig(8)
    gamma = np.ones(3)
    states = peo_run([0, 2, 2, MISSING, 1], gamma, cfg)
    prev = states[2].posterior()
    transition = np.zeros((prev.size + 1, prev.size))
    transition[0, :] = 1 / cfg.tau
    transition[np.arange(1, prev.size + 1), np.arange(prev.size)] = 1 - 1 / cfg.tau
    assert np.allclose(states[3].posterior(), transition @ prev, rtol=1e-13, atol=0)
    assert np.array_equal(states[3].suffstats[1:], states[2].suffstats)


def test_none_and_missing_token_agree():
    a = peo_detect([0, 1, None, 1, 0], n_classes=2)
    b = peo_detect([0, 1, MISSING, 1, 0], n_classes=2)
    assert np.array_equal(a.posterior, b.posterior)


@settings(max_examples=40, deadline=None)
@given(labels=st.lists(st.sampled_from([MISSING, 0, 1, 2]), min_size=1, max_size=30))
def test_suffstats_are_prior_plus_recent_histogram(labels):
    gamma = np.array([0.5, 1.0, 2.0])
    states = peo_run(labels, gamma, HazardConfig(20))
    for t, state in enumerate(states, start=1):
        for r in range(t + 1):
            recent = [z for z in labels[t - r : t] if z != MISSING]
            assert np.array_equal(state.suffstats[r], gamma + np.bincount(recent, minlength=3))


@settings(max_examples=40, deadline=None)
@given(labels=st.lists(st.sampled_from([MISSING, 0, 1]), min_size=1, max_size=60),
       tau=st.floats(1.5, 500))
def test_posterior_rows_normalised_and_supported(labels, tau):
    report = peo_detect(labels, n_classes=2, cfg=HazardConfig(tau))
    assert np.all(np.abs(report.posterior.sum(axis=1) - 1.0) <= 1e-10)
    for t in range(len(labels)):
        assert np.all(report.posterior[t, t + 2 :] == 0.0)
    assert np.array_equal(report.runlength_map, report.posterior.argmax(axis=1))


def test_single_class_sequence_has_no_detections():
    report = peo_detect(np.zeros(300, dtype=int), n_classes=4)
    assert report.detected_cps == []
    assert np.array_equal(report.runlength_map, np.arange(1, 301))


def test_label_out_of_range():
    with pytest.raises(ValueError):
        peo_detect([0, 3], n_classes=2)


def test_pruning_removes_small_mass_only():
    rng = np.random.default_rng(3)
    labels = np.concatenate([rng.choice(3, 60, p=[.8, .1, .1]), rng.choice(3, 60, p=[.1, .1, .8])])
    full = peo_detect(labels, n_classes=3)
    pruned = peo_detect(labels, n_classes=3, prune_threshold=1e-12)
    assert np.array_equal(full.runlength_map, pruned.runlength_map)
    assert np.allclose(full.posterior, pruned.posterior, atol=1e-9)
    assert (pruned.posterior == 0).sum() > (full.posterior == 0).sum()


def test_impossible_observation_underflows():
    with pytest.raises(NumericalUnderflow):
        detector._advance(np.zeros(3), np.full(3, -np.inf), HazardConfig(), 4)


# -- change-point extraction ---------------------------------------------------------


def test_true_run_lengths():
    assert true_run_lengths(7, [3, 5]).tolist() == [1, 2, 3, 1, 2, 1, 2]


def test_drop_rule():
    rmap = list(range(1, 41)) + [3, 4, 5, 6]
    assert detect_change_points(rmap) == [(41, 38)]
    # from 8 the threshold is max(5, 4) = 5, so a fall to 4 is ignored
    assert detect_change_points([1, 2, 3, 4, 5, 6, 7, 8, 4, 5]) == []
    assert detect_change_points([1, 2, 3, 4, 5, 6, 7, 8, 1, 2]) == [(9, 8)]


def test_later_drop_refines_same_change():
    rmap = list(range(1, 31)) + [10, 11, 2, 3]
    # t=31 dates a change at 21; t=33 dates it at 31, not after 31, so it replaces
    assert detect_change_points(rmap) == [(33, 31)]
    rmap = list(range(1, 31)) + [10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 2]
    # the second drop dates its change at 49 > 31, so it is new
    assert [cp for _, cp in detect_change_points(rmap)] == [21, 49]
    rmap = list(range(1, 21)) + [8, 1]
    # t=21 dates a change at 13; t=22 dates it at 21, so it replaces
    assert detect_change_points(rmap) == [(22, 21)]


def test_clear_changes_detected():
    rng = np.random.default_rng(4)
    probs = [[.85, .05, .05, .05], [.05, .85, .05, .05], [.05, .05, .05, .85]]
    labels = np.concatenate([rng.choice(4, 80, p=p) for p in probs])
    cps = peo_detect(labels, n_classes=4).estimated_cp_times()
    assert len(cps) == 2
    assert abs(cps[0] - 80) <= 5 and abs(cps[1] - 160) <= 5


# -- FPO -----------------------------------------------------------------------------


def test_fpo_constant_sequence_never_resets():
    z = np.tile([0.2, 0.5, 0.3], (30, 1))
    report = fpo_detect(z, n_samples=200, burn_in=100)
    assert np.array_equal(report.runlength_map, np.arange(1, 31))
    assert report.detected_cps == []
    assert np.all(np.abs(report.posterior.sum(axis=1) - 1.0) <= 1e-10)


def test_fpo_thread_count_does_not_change_result():
    z = np.random.default_rng(5).dirichlet([2.0, 1.0, 1.0], size=15)
    a = fpo_detect(z, n_samples=100, burn_in=50, seed=3, n_jobs=1)
    b = fpo_detect(z, n_samples=100, burn_in=50, seed=3, n_jobs=4)
    assert np.array_equal(a.posterior, b.posterior)


def test_fpo_missing_row_is_hazard_transition():
    z = np.random.default_rng(6).dirichlet([2.0, 2.0], size=8)
    z[5] = np.nan
    report = fpo_detect(z, n_samples=100, burn_in=50)
    prev, cur = report.posterior[4, :6], report.posterior[5, :7]
    assert cur[0] == pytest.approx(0.01 * prev.sum(), rel=1e-12)
    assert np.allclose(cur[1:], 0.99 * prev, rtol=1e-12)


def test_fpo_single_class_matches_peo():
    fpo = fpo_detect(np.ones((12, 1)), n_samples=10, burn_in=5)
    peo = peo_detect(np.zeros(12, dtype=int), n_classes=1)
    assert np.allclose(fpo.posterior, peo.posterior, rtol=1e-13, atol=0)


def test_fpo_rejects_off_simplex_rows():
    with pytest.raises(ValueError):
        fpo_detect(np.array([[0.5, 0.7]]))
    with pytest.raises(ValueError):
        fpo_detect(np.array([0.5, 0.5]))


def test_fpo_one_hot_inputs_are_clamped():
    z = np.eye(2)[[0, 0, 1, 1, 0]]
    report = fpo_detect(z, n_samples=100, burn_in=50, priors=FpoPriors(kappa=2.0, nu=0.5))
    assert np.all(np.isfinite(report.posterior))
    assert np.allclose(report.posterior.sum(axis=1), 1.0, atol=1e-10)


def test_log_evidence_matches_normaliser():
    labels = [0, 1, 1, 0, 2]
    states = peo_run(labels, np.ones(3), HazardConfig(10))
    assert states[-1].log_evidence == pytest.approx(logsumexp(states[-1].log_joint))
    assert peo_detect(labels, n_classes=3, cfg=HazardConfig(10)).log_evidence == pytest.approx(
        np.log(brute_force_joint(np.array(labels), np.ones(3), 10).sum()), rel=1e-12)
