"""Exact filtering and forward smoothing for finite state processes.

Each state ``x`` of the enumerated space carries three functionals whose
filter-weighted means are the smoothed sufficient statistics:

* ``T1(x)`` accumulates the states themselves (for ``S1``),
* ``C(x)`` accumulates past allocation means (``S2`` minus the current term),
* ``T3(x)`` accumulates the process statistic ``s3`` (for ``S3``).

Batch mode sums plain additive terms; online mode replaces every sum by the
stochastic-approximation running average with step sizes ``gamma_t``.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .model import obs_loglik
from .params import SuffStats, ThetaParams, mstep


class NumericalUnderflowError(ArithmeticError):
    """Every state received zero probability."""


class NotEnumerableError(ValueError):
    """Exact inference was requested for a continuous state process."""


@dataclass
class FilterState:
    """Filter at time ``t`` plus per-state functionals.

    ``y`` is the observation that produced this filter; the next smoothing
    step needs it for the allocation term.
    """

    t: int
    probs: np.ndarray
    T1: np.ndarray
    C: np.ndarray
    T3: np.ndarray
    log_evidence: float
    y: np.ndarray


def _require_finite(process):
    if not getattr(process, "finite", False):
        raise NotEnumerableError(f"{process!r} has no finite state space")


def _normalise(logu):
    mx = np.max(logu)
    if not np.isfinite(mx):
        raise NumericalUnderflowError("all states have zero posterior probability")
    w = np.exp(logu - mx)
    s = w.sum()
    return w / s, float(mx + np.log(s))


def exact_init(process, theta, y, gamma=1.0):
    """Filter at ``t = 1``: ``p(x_1 | y_1)`` with ``T1 = gamma x``, ``C = 0``, ``T3 = gamma s3_1(x)``."""
    _require_finite(process)
    y = np.asarray(y, dtype=np.float64)
    X = process.states()
    logu = process.log_initial_probs(theta.psi) + kernels.poisson_loglik_rows(theta.B, X, y)
    probs, ll = _normalise(logu)
    return FilterState(
        t=1,
        probs=probs,
        T1=gamma * X,
        C=np.zeros((X.shape[0],) + theta.B.shape),
        T3=gamma * process.s3_initial_table(),
        log_evidence=ll,
        y=y,
    )


def _predict(P, probs):
    return probs @ P


def exact_filter_step(process, theta, filt, y):
    """Advance the filter by one observation; functionals are carried unchanged."""
    _require_finite(process)
    y = np.asarray(y, dtype=np.float64)
    P = process.transition_matrix(theta.psi)
    pred = _predict(P, filt.probs)
    with np.errstate(divide="ignore"):
        logu = np.log(pred) + kernels.poisson_loglik_rows(theta.B, process.states(), y)
    probs, ll = _normalise(logu)
    return replace(filt, t=filt.t + 1, probs=probs, log_evidence=filt.log_evidence + ll, y=y)


def backward_kernel_matrix(P, prev_probs):
    """``BK[i, j] = p(x_{t-1} = i | x_t = j, y_{1:t-1})``; columns sum to one."""
    joint = prev_probs[:, None] * P
    norm = joint.sum(axis=0)
    if np.any(norm <= 0):
        raise NumericalUnderflowError("unreachable state in backward kernel")
    return joint / norm[None, :]


def backward_kernel(process, psi, prev_probs, j):
    """Backward kernel column for the state with index ``j``."""
    _require_finite(process)
    P = process.transition_matrix(psi)
    col = np.asarray(prev_probs) * P[:, j]
    total = col.sum()
    if not total > 0:
        raise NumericalUnderflowError(f"state {j} unreachable from the previous filter")
    return col / total


def smoothing_step(process, theta, filt, y_prev, y, gamma=None, gamma_prev=None):
    """One forward-smoothing step followed by the filter update.

    With ``gamma=None`` the batch recursion is used (all weights one).
    Otherwise the online recursion with weights ``(1 - gamma)`` on the old
    functionals, ``gamma`` on new state terms and ``(1 - gamma) * gamma_prev``
    on the allocation term of the previous observation.
    """
    _require_finite(process)
    if gamma is None:
        a, b, c = 1.0, 1.0, 1.0
    else:
        a, b, c = 1.0 - gamma, gamma, (1.0 - gamma) * gamma_prev
    X = process.states()
    P = process.transition_matrix(theta.psi)
    BK = backward_kernel_matrix(P, filt.probs)
    n = X.shape[0]

    T1 = BK.T @ (a * filt.T1) + b * X
    T3 = BK.T @ (a * filt.T3) + b * np.einsum("ij,ijl->jl", BK, process.s3_pair_table())
    inner = kernels.c_update(filt.C, theta.B, X, y_prev, a, c)
    C = (BK.T @ inner.reshape(n, -1)).reshape(filt.C.shape)

    nxt = exact_filter_step(process, theta, filt, y)
    return replace(nxt, T1=T1, C=C, T3=T3)


def extract_suffstats(process, filt, B, y, weight=1.0):
    """Filter-weighted functionals plus ``weight`` times the current allocation mean."""
    X = process.states()
    p = filt.probs
    S1 = p @ filt.T1
    S3 = p @ filt.T3
    S2 = np.tensordot(p, filt.C, axes=1) + weight * kernels.weighted_allocation_sum(p, B, X, y)
    return SuffStats(S1, S2, S3)


def batch_smoothed_stats(process, theta, ys):
    """Smoothed ``(S1, S2, S3)`` over the whole record and its log-likelihood."""
    ys = [np.asarray(y, dtype=np.float64) for y in ys]
    if not ys:
        raise ValueError("empty observation sequence")
    filt = exact_init(process, theta, ys[0])
    for y_prev, y in zip(ys[:-1], ys[1:]):
        filt = smoothing_step(process, theta, filt, y_prev, y)
    return extract_suffstats(process, filt, theta.B, ys[-1]), filt.log_evidence


def batch_em_iteration(process, theta, ys, estimate_B=True, estimate_psi=True):
    """One EM iteration; returns the new parameter and the log-likelihood of ``theta``."""
    stats, loglik = batch_smoothed_stats(process, theta, ys)
    return mstep(process, theta, stats, estimate_B, estimate_psi), loglik


def marginal_loglik(process, theta, ys):
    """``log p_theta(y_1:T)`` from the filter normalisers."""
    it = iter(ys)
    try:
        y0 = next(it)
    except StopIteration:
        return 0.0
    filt = exact_init(process, theta, y0)
    for y in it:
        filt = exact_filter_step(process, theta, filt, y)
    return filt.log_evidence


# ------------------------------------------------------------------ online EM

@dataclass
class ExactOnlineState:
    """Running state of exact online EM; ``t == 0`` before the first observation."""

    theta: ThetaParams
    t: int = 0
    filter: FilterState = None
    gamma: float = None
    stats: SuffStats = None


def exact_online_init(process, theta):
    _require_finite(process)
    return ExactOnlineState(theta=theta)


def exact_online_em_step(process, state, y, schedule, burn_in, estimate_B=True, estimate_psi=True):
    """Consume one observation; returns ``(new_state, theta_next)``.

    Statistics are always updated; the maximisation only runs once
    ``t >= burn_in``.
    """
    y = np.asarray(y, dtype=np.float64)
    theta = state.theta
    t = state.t + 1
    gamma = schedule(t)
    if state.filter is None:
        filt = exact_init(process, theta, y, gamma)
    else:
        filt = smoothing_step(process, theta, state.filter, state.filter.y, y, gamma, state.gamma)
    stats = extract_suffstats(process, filt, theta.B, y, weight=gamma)
    if t >= burn_in:
        theta_next = mstep(process, theta, stats, estimate_B, estimate_psi)
    else:
        theta_next = theta
    return ExactOnlineState(theta_next, t, filt, gamma, stats), theta_next


# ---------------------------------------------------------------- the oracle

class InstanceTooLargeError(ValueError):
    pass


def _oracle_allocation_mean(B, x, y):
    lam = B @ x
    out = np.zeros_like(B)
    for m in range(B.shape[0]):
        if y[m] > 0 and lam[m] > 0:
            out[m] = y[m] * B[m] * x / lam[m]
    return out


def brute_force_smoothed_stats(process, theta, ys, max_paths=10**7, chunk=1 << 16):
    """Smoothed statistics and log-likelihood by summing over every state path.

    Independent of the forward recursions: path weights come from the joint
    density, statistics from path-weighted state and pair marginals.
    """
    _require_finite(process)
    ys = [np.asarray(y, dtype=np.float64) for y in ys]
    T = len(ys)
    X = process.states()
    S = X.shape[0]
    n_paths = S ** T
    if T == 0 or n_paths > max_paths:
        raise InstanceTooLargeError(f"{S}**{T} paths exceeds the limit {max_paths}")

    psi, B = theta.psi, theta.B
    log_mu = np.array([process.initial_logdensity(psi, x) for x in X])
    log_f = np.array([[process.transition_logdensity(psi, xi, xj) for xj in X] for xi in X])
    log_g = np.array([[obs_loglik(B, x, y) for x in X] for y in ys])
    alloc = np.array([[_oracle_allocation_mean(B, x, y) for x in X] for y in ys])
    s3_pair = np.array([[process.s3(xi, xj) for xj in X] for xi in X])
    s3_init = np.array([process.s3_initial(x) for x in X])

    def paths(lo, hi):
        return np.stack(np.unravel_index(np.arange(lo, hi), (S,) * T), axis=1)

    def path_logw(pth):
        lw = log_mu[pth[:, 0]] + log_g[0, pth[:, 0]]
        for t in range(1, T):
            lw = lw + log_f[pth[:, t - 1], pth[:, t]] + log_g[t, pth[:, t]]
        return lw

    logw = np.concatenate([path_logw(paths(lo, min(lo + chunk, n_paths)))
                           for lo in range(0, n_paths, chunk)])
    loglik = float(logsumexp(logw))
    w_all = np.exp(logw - loglik)

    marg = np.zeros((T, S))
    pair = np.zeros((T, S, S))
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        pth, w = paths(lo, hi), w_all[lo:hi]
        for t in range(T):
            marg[t] += np.bincount(pth[:, t], weights=w, minlength=S)
            if t > 0:
                flat = pth[:, t - 1] * S + pth[:, t]
                pair[t] += np.bincount(flat, weights=w, minlength=S * S).reshape(S, S)

    S1 = marg.sum(axis=0) @ X
    S2 = np.einsum("ts,tsmk->mk", marg, alloc)
    S3 = marg[0] @ s3_init + np.einsum("tij,ijl->l", pair[1:], s3_pair)
    return SuffStats(S1, S2, S3), loglik
