import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinenmf.exact import (
    InstanceTooLargeError,
    NotEnumerableError,
    NumericalUnderflowError,
    backward_kernel,
    backward_kernel_matrix,
    batch_em_iteration,
    batch_smoothed_stats,
    brute_force_smoothed_stats,
    exact_filter_step,
    exact_init,
    exact_online_em_step,
    exact_online_init,
    extract_suffstats,
    marginal_loglik,
    smoothing_step,
)
from onlinenmf.model import allocation_posterior_mean, obs_loglik
from onlinenmf.params import StepSizeSchedule, ThetaParams
from onlinenmf.processes import (
    BasisSelectionParams,
    BasisSelectionProcess,
    RelaxedProcess,
    basis_transition_logprob,
)

from conftest import random_instance


def enumerate_posterior(proc, theta, ys):
    """Independent oracle: joint path weights from the model densities directly."""
    X = proc.states()
    S, T = len(X), len(ys)
    logw, paths = [], list(itertools.product(range(S), repeat=T))
    for pth in paths:
        lw = -proc.K * math.log(2) + obs_loglik(theta.B, X[pth[0]], ys[0])
        for t in range(1, T):
            lw += basis_transition_logprob(theta.psi, X[pth[t - 1]], X[pth[t]])
            lw += obs_loglik(theta.B, X[pth[t]], ys[t])
        logw.append(lw)
    logw = np.array(logw)
    ll = np.logaddexp.reduce(logw)
    return np.array(paths), np.exp(logw - ll), ll


def _theta(B, p=0.7, q=0.6):
    return ThetaParams(np.asarray(B, dtype=float), BasisSelectionParams(p, q))


class TestFilter:
    def test_uninformative_counts_keep_uniform(self):
        proc = BasisSelectionProcess(1)
        theta = _theta(np.zeros((2, 1)), 0.5, 0.5)
        f = exact_init(proc, theta, [0, 0])
        for _ in range(3):
            f = exact_filter_step(proc, theta, f, [0, 0])
        np.testing.assert_allclose(f.probs, [0.5, 0.5], atol=1e-15)

    def test_symmetric_sources(self):
        proc = BasisSelectionProcess(2)
        theta = _theta([[1.0, 1.0], [2.0, 2.0]], 0.5, 0.5)
        f = exact_init(proc, theta, [1, 3])
        f = exact_filter_step(proc, theta, f, [2, 2])
        assert f.probs[1] == pytest.approx(f.probs[2], abs=1e-15)

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(0)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=3)
        f = exact_init(proc, theta, Y[0])
        for y in Y[1:]:
            f = exact_filter_step(proc, theta, f, y)
        paths, w, ll = enumerate_posterior(proc, theta, Y)
        np.testing.assert_allclose(f.probs, np.bincount(paths[:, -1], weights=w), atol=1e-12)
        assert f.log_evidence == pytest.approx(ll, abs=1e-10)

    def test_huge_count_concentrates(self):
        proc = BasisSelectionProcess(1)
        theta = _theta([[5.0], [0.0]])
        f = exact_init(proc, theta, [0, 0])
        f = exact_filter_step(proc, theta, f, [60, 0])
        assert f.probs[1] > 0.999

    def test_impossible_observation(self):
        proc = BasisSelectionProcess(1)
        theta = _theta([[0.0]])
        with pytest.raises(NumericalUnderflowError):
            exact_init(proc, theta, [3])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_normalised(self, seed):
        rng = np.random.default_rng(seed)
        proc, theta, Y = random_instance(rng, K=2, M=3, T=6)
        f = exact_init(proc, theta, Y[0])
        for y_prev, y in zip(Y[:-1], Y[1:]):
            f = smoothing_step(proc, theta, f, y_prev, y)
            assert abs(f.probs.sum() - 1) < 1e-12
            assert np.all(f.C >= 0)

    def test_needs_finite_process(self):
        with pytest.raises(NotEnumerableError):
            exact_init(RelaxedProcess(2), None, [1])


class TestBackwardKernel:
    def test_uniform(self):
        proc = BasisSelectionProcess(1)
        np.testing.assert_allclose(
            backward_kernel(proc, BasisSelectionParams(0.5, 0.5), [0.5, 0.5], 0), [0.5, 0.5])

    def test_stay_switch(self):
        proc = BasisSelectionProcess(1)
        np.testing.assert_allclose(
            backward_kernel(proc, BasisSelectionParams(0.9, 0.9), [0.5, 0.5], 0), [0.9, 0.1])

    def test_direct_formula(self):
        rng = np.random.default_rng(1)
        proc = BasisSelectionProcess(2)
        psi = BasisSelectionParams(0.3, 0.8)
        prev = rng.dirichlet(np.ones(4))
        S = proc.states()
        for j in range(4):
            raw = np.array([prev[i] * math.exp(basis_transition_logprob(psi, S[i], S[j]))
                            for i in range(4)])
            np.testing.assert_allclose(backward_kernel(proc, psi, prev, j), raw / raw.sum())
        BK = backward_kernel_matrix(proc.transition_matrix(psi), prev)
        np.testing.assert_allclose(BK.sum(axis=0), 1.0)

    def test_unreachable(self):
        P = np.array([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(NumericalUnderflowError):
            backward_kernel_matrix(P, np.array([1.0, 0.0]))


class TestSmoothing:
    def test_initial_functionals(self):
        proc = BasisSelectionProcess(2)
        theta = _theta(np.ones((3, 2)))
        for gamma in (1.0, 0.3):
            f = exact_init(proc, theta, [1, 0, 2], gamma)
            np.testing.assert_allclose(f.T1, gamma * proc.states())
            assert not f.C.any()

    def test_state_sum_matches_enumeration(self):
        rng = np.random.default_rng(2)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=4)
        stats, ll = batch_smoothed_stats(proc, theta, Y)
        paths, w, ll_ref = enumerate_posterior(proc, theta, Y)
        X = proc.states()
        expected = sum(wi * X[p].sum(axis=0) for p, wi in zip(paths, w))
        np.testing.assert_allclose(stats.S1, expected, atol=1e-10)
        S2 = sum(wi * sum(allocation_posterior_mean(theta.B, X[s], Y[t]) for t, s in enumerate(p))
                 for p, wi in zip(paths, w) if wi > 0)
        np.testing.assert_allclose(stats.S2, S2, atol=1e-10)
        assert ll == pytest.approx(ll_ref, abs=1e-10)

    def test_unit_step_keeps_only_last_state(self):
        rng = np.random.default_rng(3)
        proc, theta, Y = random_instance(rng, K=2, M=2, T=5)
        f = exact_init(proc, theta, Y[0], 1.0)
        for y_prev, y in zip(Y[:-1], Y[1:]):
            f = smoothing_step(proc, theta, f, y_prev, y, gamma=1.0, gamma_prev=1.0)
            np.testing.assert_allclose(f.T1, proc.states(), atol=1e-15)
            assert not f.C.any()

    def test_online_allocation_weight(self):
        # C picks up the previous allocation term with weight (1 - g_t) * g_{t-1}
        proc = BasisSelectionProcess(1)
        theta = _theta([[2.0], [1.0]], 0.999999, 0.999999)
        y1, y2 = np.array([3.0, 1.0]), np.array([2.0, 2.0])
        f = exact_init(proc, theta, y1, gamma=0.8)
        g = smoothing_step(proc, theta, f, y1, y2, gamma=0.3, gamma_prev=0.8)
        A1 = allocation_posterior_mean(theta.B, np.array([1.0]), y1)
        # nearly deterministic chain: state 1 at time 2 came from state 1
        np.testing.assert_allclose(g.C[1], 0.7 * 0.8 * A1, rtol=1e-5)


class TestSuffStats:
    def test_identical_functionals(self):
        proc = BasisSelectionProcess(1)
        theta = _theta([[1.0]])
        f = exact_init(proc, theta, [0])
        f.probs[:] = [0.5, 0.5]
        f.T1[:] = 0.25
        stats = extract_suffstats(proc, f, theta.B, np.zeros(1), weight=0.0)
        np.testing.assert_allclose(stats.S1, [0.25])

    def test_zero_count_adds_nothing(self):
        rng = np.random.default_rng(4)
        proc, theta, Y = random_instance(rng, K=2, M=3, T=3)
        f = exact_init(proc, theta, Y[0])
        a = extract_suffstats(proc, f, theta.B, np.zeros(3), weight=1.0)
        np.testing.assert_array_equal(a.S2, 0.0)

    def test_matches_brute_force_k1(self):
        rng = np.random.default_rng(5)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=4)
        stats, ll = batch_smoothed_stats(proc, theta, Y)
        ref, ll_ref = brute_force_smoothed_stats(proc, theta, Y)
        np.testing.assert_allclose(stats.S2, ref.S2, atol=1e-10)
        assert ll == pytest.approx(ll_ref, abs=1e-10)


class TestBruteForce:
    def test_single_step(self):
        rng = np.random.default_rng(6)
        proc, theta, Y = random_instance(rng, K=2, M=2, T=1)
        ref, _ = brute_force_smoothed_stats(proc, theta, Y)
        f = exact_init(proc, theta, Y[0])
        np.testing.assert_allclose(ref.S1, f.probs @ proc.states(), atol=1e-14)

    def test_relabelling_symmetry(self):
        # uninformative observations and p = q: swapping 0 and 1 maps paths onto paths
        proc = BasisSelectionProcess(1)
        ref, _ = brute_force_smoothed_stats(proc, _theta([[0.0]], 0.5, 0.5), [[0], [0]])
        assert ref.S3[0] == pytest.approx(ref.S3[2])
        assert ref.S3[1] == pytest.approx(ref.S3[3])

    def test_matches_batch_k2_t8(self):
        rng = np.random.default_rng(7)
        proc, theta, Y = random_instance(rng, K=2, M=2, T=8)
        stats, ll = batch_smoothed_stats(proc, theta, Y)
        ref, ll_ref = brute_force_smoothed_stats(proc, theta, Y)
        for a, b in ((stats.S1, ref.S1), (stats.S2, ref.S2), (stats.S3, ref.S3)):
            np.testing.assert_allclose(a, b, rtol=1e-8)
        assert ll == pytest.approx(ll_ref, rel=1e-8)

    def test_previous_denominator_too(self):
        rng = np.random.default_rng(8)
        _, theta, Y = random_instance(rng, K=2, M=2, T=5)
        proc = BasisSelectionProcess(2, s3_denominator="previous")
        stats, _ = batch_smoothed_stats(proc, theta, Y)
        ref, _ = brute_force_smoothed_stats(proc, theta, Y)
        np.testing.assert_allclose(stats.S3, ref.S3, rtol=1e-8)

    def test_refuses_large(self):
        proc = BasisSelectionProcess(3)
        with pytest.raises(InstanceTooLargeError):
            brute_force_smoothed_stats(proc, _theta(np.ones((1, 3))), np.ones((9, 1)))


class TestBatchEM:
    def test_fixed_point(self):
        rng = np.random.default_rng(9)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=10)
        for _ in range(3000):
            theta, _ = batch_em_iteration(proc, theta, Y)
        new, _ = batch_em_iteration(proc, theta, Y)
        np.testing.assert_allclose(new.B, theta.B, atol=1e-9)
        np.testing.assert_allclose(new.psi.as_tuple(), theta.psi.as_tuple(), atol=1e-9)

    def test_monotone(self):
        rng = np.random.default_rng(10)
        proc, _, Y = random_instance(rng, K=1, M=2, T=10)
        theta = _theta(rng.uniform(0.5, 2, (2, 1)), 0.5, 0.5)
        lls = []
        for _ in range(25):
            theta, ll = batch_em_iteration(proc, theta, Y)
            lls.append(ll)
        assert np.all(np.diff(lls) >= -1e-10)

    def test_converges_to_grid_optimum(self):
        # B known, (p, q) estimated: two starts agree and beat every grid point.
        # Counting occupancy at the previous state makes the M-step the exact maximiser.
        rng = np.random.default_rng(11)
        _, truth, Y = random_instance(rng, K=1, M=2, T=60, p=0.9, q=0.8, scale=8.0)
        proc = BasisSelectionProcess(1, s3_denominator="previous")
        finals = []
        for p0, q0 in ((0.3, 0.3), (0.7, 0.5)):
            theta = _theta(truth.B, p0, q0)
            for _ in range(300):
                theta, _ = batch_em_iteration(proc, theta, Y, estimate_B=False)
            finals.append(marginal_loglik(proc, theta, Y))
        grid = np.linspace(0.02, 0.98, 49)
        best = max(marginal_loglik(proc, _theta(truth.B, p, q), Y) for p in grid for q in grid)
        assert abs(finals[0] - finals[1]) < 1e-6
        assert min(finals) >= best - 1e-6

    def test_frozen_parts(self):
        rng = np.random.default_rng(12)
        proc, theta, Y = random_instance(rng, K=2, M=2, T=6)
        new, _ = batch_em_iteration(proc, theta, Y, estimate_B=False)
        np.testing.assert_array_equal(new.B, theta.B)
        new, _ = batch_em_iteration(proc, theta, Y, estimate_psi=False)
        assert new.psi is theta.psi

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20)
    def test_s2_row_conservation(self, seed):
        rng = np.random.default_rng(seed)
        proc, theta, Y = random_instance(rng, K=2, M=3, T=12)
        stats, _ = batch_smoothed_stats(proc, theta, Y)
        np.testing.assert_allclose(stats.S2.sum(axis=1), Y.sum(axis=0), rtol=1e-8, atol=1e-8)


class TestMarginalLoglik:
    def test_single_step(self):
        proc = BasisSelectionProcess(1)
        theta = _theta([[1.5], [0.5]])
        y = np.array([2, 1])
        expected = np.logaddexp(obs_loglik(theta.B, [0.0], y), obs_loglik(theta.B, [1.0], y)) - math.log(2)
        assert marginal_loglik(proc, theta, [y]) == pytest.approx(expected)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(13)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=6)
        assert marginal_loglik(proc, theta, Y) == pytest.approx(enumerate_posterior(proc, theta, Y)[2],
                                                                abs=1e-10)

    def test_additive_only_across_restarts(self):
        rng = np.random.default_rng(14)
        proc, theta, Y = random_instance(rng, K=1, M=2, T=6)
        a = marginal_loglik(proc, theta, Y[:3])
        b = marginal_loglik(proc, theta, Y[3:])
        whole = marginal_loglik(proc, theta, Y)
        assert a + b == pytest.approx(marginal_loglik(proc, theta, Y[:3]) + marginal_loglik(proc, theta, Y[3:]))
        assert abs(whole - (a + b)) > 1e-8

    def test_empty(self):
        assert marginal_loglik(BasisSelectionProcess(1), _theta([[1.0]]), []) == 0.0


class TestOnlineEM:
    def test_burn_in_freezes_theta(self):
        rng = np.random.default_rng(15)
        proc, theta, Y = random_instance(rng, K=2, M=3, T=20)
        state = exact_online_init(proc, theta)
        for y in Y:
            state, nxt = exact_online_em_step(proc, state, y, StepSizeSchedule(), burn_in=50)
            assert nxt is theta
        assert state.stats is not None and state.t == 20

    def test_first_step_stats_are_filter_mean(self):
        proc = BasisSelectionProcess(1)
        theta = _theta([[2.0]])
        state, _ = exact_online_em_step(proc, exact_online_init(proc, theta), [3],
                                        StepSizeSchedule(1.0), burn_in=10)
        f = exact_init(proc, theta, [3])
        np.testing.assert_allclose(state.stats.S1, f.probs @ proc.states())

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15)
    def test_harmonic_steps_equal_batch_average(self, seed):
        rng = np.random.default_rng(seed)
        proc, theta, Y = random_instance(rng, K=2, M=2, T=9)
        state = exact_online_init(proc, theta)
        for y in Y:
            state, _ = exact_online_em_step(proc, state, y, StepSizeSchedule(1.0), burn_in=10**9)
        batch, _ = batch_smoothed_stats(proc, theta, Y)
        T = len(Y)
        np.testing.assert_allclose(state.stats.S1, batch.S1 / T, atol=1e-8)
        np.testing.assert_allclose(state.stats.S2, batch.S2 / T, atol=1e-8)
        np.testing.assert_allclose(state.stats.S3, batch.S3 / T, atol=1e-8)
