"""Particle approximation of online EM.

Particles are stored as parallel arrays (one row per particle): states
``X`` (N, K), functionals ``T1`` (N, K), ``C`` (N, M, K), ``T3`` (N, J) and
normalised log-weights ``logw`` (N,).  Each step proposes new states,
updates the functionals along each particle's ancestry, reweights, computes
the M-step statistics from the weighted (pre-resampling) particles, then
resamples.

The default functional update follows each particle's own ancestor
(O(N) per step).  ``functional_mode="marginal"`` averages over all previous
particles with the particle backward kernel instead (O(N^2) per step).
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .params import SuffStats, ThetaParams, mstep


class ParticleCollapseError(ArithmeticError):
    """All particle weights are zero."""


class BootstrapProposal:
    """Propose from the prior dynamics: ``mu`` at the first step, ``f`` afterwards.

    Weights then reduce to the observation likelihood.  Custom proposals
    subclass this, set ``is_bootstrap = False`` and return their own
    log-densities from ``initial`` and ``transition``.
    """

    is_bootstrap = True

    def initial(self, process, theta, y, n, rng):
        return process.initial_sample(theta.psi, n, rng), None

    def transition(self, process, theta, X_prev, y, rng):
        return process.transition_sample(theta.psi, X_prev, rng), None


BOOTSTRAP = BootstrapProposal()


@dataclass
class SmcState:
    """Particle system after time ``t`` (``t == 0``: nothing observed yet)."""

    theta: ThetaParams
    n_particles: int
    rng: np.random.Generator
    t: int = 0
    X: np.ndarray = None
    T1: np.ndarray = None
    C: np.ndarray = None
    T3: np.ndarray = None
    logw: np.ndarray = None
    y: np.ndarray = None
    gamma: float = None
    ess_threshold: float = None
    functional_mode: str = "ancestral"
    proposal: BootstrapProposal = BOOTSTRAP
    log_increment: np.ndarray = None
    log_evidence: float = 0.0
    resampled: bool = False
    stats: SuffStats = None

    @property
    def weights(self):
        return np.exp(self.logw)


def _loglik(process, B, X, y):
    # finite processes: evaluate once per distinct state and gather
    if process.finite:
        table = kernels.poisson_loglik_rows(B, process.states(), y)
        return table[process.state_index(X)]
    return kernels.poisson_loglik_rows(B, X, y)


def _c_update(process, C, B, X, y, a, c):
    if process.finite:
        A = kernels.allocation_tensor(B, process.states(), y)
        return kernels.gather_axpy(C, A, process.state_index(X), a, c)
    return kernels.c_update(C, B, X, y, a, c)


def _s3(process, X_prev, X_new):
    if process.finite:
        return process.s3_pair_table()[process.state_index(X_prev), process.state_index(X_new)]
    return process.s3(X_prev, X_new)


def _weighted_allocation_sum(process, w, B, X, y):
    if process.finite:
        S = process.states()
        w_state = np.bincount(process.state_index(X), weights=w, minlength=S.shape[0])
        return kernels.weighted_allocation_sum(w_state, B, S, y)
    return kernels.weighted_allocation_sum(w, B, X, y)


def _normalise_logw(logu):
    mx = np.max(logu)
    if not np.isfinite(mx):
        raise ParticleCollapseError("every particle has zero weight")
    lse = mx + np.log(np.exp(logu - mx).sum())
    return logu - lse, float(lse)


def smc_online_init(process, theta, n_particles, rng, ess_threshold=None,
                    functional_mode="ancestral", proposal=BOOTSTRAP):
    if n_particles < 2:
        raise ValueError("need at least two particles")
    if functional_mode not in ("ancestral", "marginal"):
        raise ValueError(f"unknown functional mode {functional_mode!r}")
    return SmcState(theta=theta, n_particles=int(n_particles), rng=rng,
                    ess_threshold=ess_threshold, functional_mode=functional_mode,
                    proposal=proposal)


def smc_init(process, theta, y, n_particles, rng, gamma=1.0, **kwargs):
    """Initial particle system for the first observation ``y``."""
    state = smc_online_init(process, theta, n_particles, rng, **kwargs)
    return _init_particles(process, state, np.asarray(y, dtype=np.float64), gamma)


def _init_particles(process, state, y, gamma):
    theta, n = state.theta, state.n_particles
    X, logq = state.proposal.initial(process, theta, y, n, state.rng)
    loglik = _loglik(process, theta.B, X, y)
    if state.proposal.is_bootstrap:
        inc = loglik
    else:
        inc = process.initial_logdensity(theta.psi, X) + loglik - logq
    logw, lse = _normalise_logw(inc)
    return replace(
        state, t=1, X=X, T1=gamma * X, C=np.zeros((n,) + theta.B.shape),
        T3=gamma * process.s3_initial(X), logw=logw, y=y, gamma=gamma,
        log_increment=inc, log_evidence=lse - np.log(n), resampled=False,
    )


def smc_estep(process, state, y, gamma):
    """Propose, update functionals and reweight (no resampling)."""
    y = np.asarray(y, dtype=np.float64)
    if state.t == 0:
        return _init_particles(process, state, y, gamma)
    theta = state.theta
    X_prev = state.X
    X_new, logq = state.proposal.transition(process, theta, X_prev, y, state.rng)
    a, c = 1.0 - gamma, (1.0 - gamma) * state.gamma
    C_inner = _c_update(process, state.C, theta.B, X_prev, state.y, a, c)

    if state.functional_mode == "ancestral":
        T1 = a * state.T1 + gamma * X_new
        T3 = a * state.T3 + gamma * _s3(process, X_prev, X_new)
        C = C_inner
    else:
        W = _pairwise_backward_weights(process, theta.psi, X_prev, state.logw, X_new)
        T1 = W.T @ (a * state.T1) + gamma * X_new
        s3 = process.s3(X_prev[:, None, :], X_new[None, :, :])
        T3 = W.T @ (a * state.T3) + gamma * np.einsum("ij,ijl->jl", W, s3)
        n = X_new.shape[0]
        C = (W.T @ C_inner.reshape(n, -1)).reshape(C_inner.shape)

    loglik = _loglik(process, theta.B, X_new, y)
    if state.proposal.is_bootstrap:
        inc = loglik
    else:
        inc = process.transition_logdensity(theta.psi, X_prev, X_new) + loglik - logq
    logw, lse = _normalise_logw(state.logw + inc)
    return replace(state, t=state.t + 1, X=X_new, T1=T1, C=C, T3=T3, logw=logw,
                   y=y, gamma=gamma, log_increment=inc,
                   log_evidence=state.log_evidence + lse, resampled=False)


def smc_mstep_stats(process, state, y=None, gamma=None):
    """Weighted statistics from the particles before resampling."""
    y = state.y if y is None else np.asarray(y, dtype=np.float64)
    gamma = state.gamma if gamma is None else gamma
    w = state.weights
    S1 = w @ state.T1
    S3 = w @ state.T3
    S2 = (np.tensordot(w, state.C, axes=1)
          + gamma * _weighted_allocation_sum(process, w, state.theta.B, state.X, y))
    return SuffStats(S1, S2, S3)


def _check_simplex(weights):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-8):
        raise ValueError("weights must be a nonnegative vector summing to one")
    return w


def systematic_resample(weights, rng):
    """Indices with expected multiplicity ``N * w_i`` from a single uniform offset."""
    w = _check_simplex(weights)
    return kernels.systematic_resample(w, rng.random())


def ess(weights):
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def smc_resample(state):
    """Resample particles together with their functionals; weights become ``1/N``."""
    idx = systematic_resample(state.weights, state.rng)
    n = state.n_particles
    return replace(state, X=state.X[idx], T1=state.T1[idx], C=state.C[idx], T3=state.T3[idx],
                   logw=np.full(n, -np.log(n)), resampled=True)


def _should_resample(state):
    if state.ess_threshold is None:
        return True
    return ess(state.weights) < state.ess_threshold * state.n_particles


def smc_online_em_step(process, state, y, schedule, burn_in, estimate_B=True, estimate_psi=True):
    """One time step of particle online EM; returns ``(new_state, theta_next)``."""
    t = state.t + 1
    gamma = schedule(t)
    pre = smc_estep(process, state, y, gamma)
    stats = smc_mstep_stats(process, pre)
    if t >= burn_in:
        theta_next = mstep(process, pre.theta, stats, estimate_B, estimate_psi)
    else:
        theta_next = pre.theta
    post = smc_resample(pre) if _should_resample(pre) else pre
    post = replace(post, theta=theta_next, stats=stats)
    return post, theta_next


# ----------------------------------------------------- particle backward kernel

def _pairwise_backward_weights(process, psi, X_prev, logw_prev, X_new):
    """``W[i, j]`` proportional to ``w_i f(X_new[j] | X_prev[i])``, columns normalised."""
    logf = process.transition_logdensity(psi, X_prev[:, None, :], X_new[None, :, :])
    logu = logw_prev[:, None] + logf
    norm = logsumexp(logu, axis=0)
    if not np.all(np.isfinite(norm)):
        raise ParticleCollapseError("new particle unreachable from every previous particle")
    return np.exp(logu - norm[None, :])


def backward_kernel_smc(process, psi, X_prev, weights_prev, x_new):
    """Particle backward kernel ``w_i f(x_new | x_i) / sum_j w_j f(x_new | x_j)``."""
    w = _check_simplex(weights_prev)
    with np.errstate(divide="ignore"):
        logu = np.log(w) + process.transition_logdensity(psi, np.asarray(X_prev, dtype=np.float64),
                                                         np.asarray(x_new, dtype=np.float64)[None, :])
    if not np.any(np.isfinite(logu)):
        raise ParticleCollapseError("x_new unreachable from every previous particle")
    return np.exp(logu - logsumexp(logu))
