"""Hot per-state / per-particle kernels.

Each kernel exists twice: a loop version compiled with numba and a
vectorised numpy version.  Both consume the same pre-drawn random numbers,
so switching backends changes results only at rounding level.  The active
backend is numba unless ``ONLINENMF_DISABLE_JIT`` is set (see ``_jit``).

Row conventions: ``X`` is ``(N, K)`` (one state or particle per row), ``B``
is ``(M, K)`` and ``y`` is a length-``M`` float vector of counts.
"""

import logging
import math
from collections import Counter
from types import SimpleNamespace

import numpy as np
from scipy.special import gammaln

from ._jit import JIT_ENABLED, njit

log = logging.getLogger(__name__)

#: stand-in denominator for an exactly zero rate
EPS_INTENSITY = 1e-12
#: representable bounds of relaxed-chain states
UNIT_FLOOR = np.finfo(np.float64).tiny
UNIT_CAP = np.nextafter(1.0, 0.0)

#: running count of floored zero intensities (positive count, zero rate)
DIAGNOSTICS = Counter()


def log_factorial_sum(y):
    return float(gammaln(np.asarray(y, dtype=np.float64) + 1.0).sum())


# ---------------------------------------------------------------- numpy path

def _poisson_loglik_rows_np(B, X, y, log_fact):
    lam = X @ B.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ylog = np.where(y > 0, y * np.log(lam), 0.0)
    return ylog.sum(axis=1) - lam.sum(axis=1) - log_fact


def _safe_denominator(lam):
    # only an exactly zero rate is floored; tiny positive rates are divided
    # through as ratios (B x) / lam <= 1, which cannot overflow
    return np.where(lam > 0.0, lam, EPS_INTENSITY)


def _allocation_tensor_np(B, X, y):
    lam = X @ B.T
    n_floor = int(np.count_nonzero((lam <= 0.0) & (y > 0)))
    frac = B[None, :, :] * X[:, None, :] / _safe_denominator(lam)[:, :, None]
    return frac * y[None, :, None], n_floor


def _weighted_allocation_sum_np(w, B, X, y):
    lam = X @ B.T
    live = (w[:, None] > 0) & (y[None, :] > 0)
    n_floor = int(np.count_nonzero(live & (lam <= 0.0)))
    den = _safe_denominator(lam)
    fast = den >= EPS_INTENSITY
    r = np.where(fast, w[:, None] / den, 0.0)
    S = B * y[:, None] * (r.T @ X)
    slow = live & ~fast
    if slow.any():
        i, m = np.nonzero(slow)
        terms = B[m] * X[i] / den[i, m][:, None] * (w[i] * y[m])[:, None]
        np.add.at(S, m, terms)
    return S, n_floor


def _c_update_np(C, B, X, y, a, c):
    A, n_floor = _allocation_tensor_np(B, X, y)
    return a * C + c * A, n_floor


def _gather_axpy_np(C, A, idx, a, c):
    return a * C + c * A[idx]


def _systematic_resample_np(w, u):
    n = w.shape[0]
    cs = np.cumsum(w)
    cs /= cs[-1]
    positions = (np.arange(n) + u) / n
    idx = np.searchsorted(cs, positions, side="right")
    return np.minimum(idx, n - 1)


def _relaxed_step_np(X, alpha, u_branch, u_pos):
    rho = np.where(X <= 0.5, alpha, 1.0 - alpha)
    down = u_branch < rho
    # always move at least one ulp so the branch is recoverable from (x, x');
    # only the floor (down) and the cap (up) can still produce x' == x
    lower = np.maximum(np.minimum(X * u_pos, np.nextafter(X, 0.0)), UNIT_FLOOR)
    upper = np.minimum(np.maximum(X + (1.0 - X) * (1.0 - u_pos), np.nextafter(X, 1.0)), UNIT_CAP)
    return np.where(down, lower, upper)


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _poisson_loglik_rows_nb(B, X, y, log_fact):
    n, K = X.shape
    M = B.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for m in range(M):
            lam = 0.0
            for k in range(K):
                lam += B[m, k] * X[i, k]
            if y[m] > 0:
                if lam <= 0.0:
                    s = -np.inf
                    break
                s += y[m] * math.log(lam)
            s -= lam
        out[i] = s - log_fact
    return out


@njit(cache=True)
def _c_update_core_nb(C, B, X, y, a, c, out):
    n, K = X.shape
    M = B.shape[0]
    n_floor = 0
    for i in range(n):
        for m in range(M):
            lam = 0.0
            for k in range(K):
                lam += B[m, k] * X[i, k]
            if lam <= 0.0:
                if y[m] > 0:
                    n_floor += 1
                lam = EPS_INTENSITY
            if lam >= EPS_INTENSITY:
                scale = c * y[m] / lam
                for k in range(K):
                    out[i, m, k] = a * C[i, m, k] + scale * B[m, k] * X[i, k]
            else:
                for k in range(K):
                    out[i, m, k] = a * C[i, m, k] + c * y[m] * (B[m, k] * X[i, k] / lam)
    return n_floor


def _allocation_tensor_nb(B, X, y):
    n, K = X.shape
    out = np.empty((n, B.shape[0], K))
    n_floor = _c_update_core_nb(np.zeros_like(out), B, X, y, 0.0, 1.0, out)
    return out, n_floor


def _c_update_nb(C, B, X, y, a, c):
    out = np.empty_like(C)
    n_floor = _c_update_core_nb(C, B, X, y, a, c, out)
    return out, n_floor


@njit(cache=True)
def _weighted_allocation_sum_nb(w, B, X, y):
    n, K = X.shape
    M = B.shape[0]
    acc = np.zeros((M, K))
    # contributions of tiny positive rates, kept as bounded ratios
    extra = np.zeros((M, K))
    n_floor = 0
    for i in range(n):
        if w[i] == 0.0:
            continue
        for m in range(M):
            if y[m] == 0:
                continue
            lam = 0.0
            for k in range(K):
                lam += B[m, k] * X[i, k]
            if lam <= 0.0:
                n_floor += 1
                lam = EPS_INTENSITY
            if lam >= EPS_INTENSITY:
                r = w[i] / lam
                for k in range(K):
                    acc[m, k] += r * X[i, k]
            else:
                for k in range(K):
                    extra[m, k] += w[i] * (B[m, k] * X[i, k] / lam)
    for m in range(M):
        for k in range(K):
            acc[m, k] = (acc[m, k] * B[m, k] + extra[m, k]) * y[m]
    return acc, n_floor


@njit(cache=True)
def _gather_axpy_nb(C, A, idx, a, c):
    out = np.empty_like(C)
    n, M, K = C.shape
    for i in range(n):
        j = idx[i]
        for m in range(M):
            for k in range(K):
                out[i, m, k] = a * C[i, m, k] + c * A[j, m, k]
    return out


@njit(cache=True)
def _systematic_resample_nb(w, u):
    n = w.shape[0]
    cs = np.cumsum(w)
    total = cs[n - 1]
    idx = np.empty(n, dtype=np.int64)
    j = 0
    for i in range(n):
        pos = (i + u) / n
        while j < n - 1 and cs[j] / total <= pos:
            j += 1
        idx[i] = j
    return idx


@njit(cache=True)
def _relaxed_step_nb(X, alpha, u_branch, u_pos):
    n, K = X.shape
    out = np.empty_like(X)
    lo = np.finfo(np.float64).tiny
    hi = np.nextafter(1.0, 0.0)
    for i in range(n):
        for k in range(K):
            x = X[i, k]
            rho = alpha if x <= 0.5 else 1.0 - alpha
            if u_branch[i, k] < rho:
                v = max(min(x * u_pos[i, k], np.nextafter(x, 0.0)), lo)
            else:
                v = min(max(x + (1.0 - x) * (1.0 - u_pos[i, k]), np.nextafter(x, 1.0)), hi)
            out[i, k] = v
    return out


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    poisson_loglik_rows=_poisson_loglik_rows_np,
    allocation_tensor=_allocation_tensor_np,
    weighted_allocation_sum=_weighted_allocation_sum_np,
    c_update=_c_update_np,
    gather_axpy=_gather_axpy_np,
    systematic_resample=_systematic_resample_np,
    relaxed_step=_relaxed_step_np,
)

NUMBA_KERNELS = SimpleNamespace(
    name="numba",
    poisson_loglik_rows=_poisson_loglik_rows_nb,
    allocation_tensor=_allocation_tensor_nb,
    weighted_allocation_sum=_weighted_allocation_sum_nb,
    c_update=_c_update_nb,
    gather_axpy=_gather_axpy_nb,
    systematic_resample=_systematic_resample_nb,
    relaxed_step=_relaxed_step_nb,
)

_active = NUMBA_KERNELS if JIT_ENABLED else NUMPY_KERNELS


def backend():
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return _active.name


def set_backend(name):
    """Switch kernels at runtime; returns the previous backend name."""
    global _active
    prev = _active.name
    if name == "numba":
        if not JIT_ENABLED:
            raise RuntimeError("numba backend disabled (ONLINENMF_DISABLE_JIT or numba missing)")
        _active = NUMBA_KERNELS
    elif name == "numpy":
        _active = NUMPY_KERNELS
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _count_floors(n_floor):
    if n_floor:
        DIAGNOSTICS["zero_intensity_floor"] += n_floor
        log.debug("floored %d zero intensities", n_floor)


def poisson_loglik_rows(B, X, y, log_fact=None):
    """Poisson observation log-likelihood of ``y`` for every row of ``X``."""
    y = _f64(y)
    if log_fact is None:
        log_fact = log_factorial_sum(y)
    return _active.poisson_loglik_rows(_f64(B), _f64(X), y, float(log_fact))


def allocation_tensor(B, X, y):
    """Posterior mean allocations ``B * (y x^T) / (B x)`` per row, shape (N, M, K)."""
    A, n_floor = _active.allocation_tensor(_f64(B), _f64(X), _f64(y))
    _count_floors(n_floor)
    return A


def weighted_allocation_sum(w, B, X, y):
    """``sum_i w_i * allocation_tensor(B, X, y)[i]`` without the (N, M, K) temporary."""
    S, n_floor = _active.weighted_allocation_sum(_f64(w), _f64(B), _f64(X), _f64(y))
    _count_floors(n_floor)
    return S


def c_update(C, B, X, y, a, c):
    """Fused ``a * C + c * allocation_tensor(B, X, y)``."""
    out, n_floor = _active.c_update(_f64(C), _f64(B), _f64(X), _f64(y), float(a), float(c))
    _count_floors(n_floor)
    return out


def gather_axpy(C, A, idx, a, c):
    """``a * C + c * A[idx]`` in one pass."""
    return _active.gather_axpy(_f64(C), _f64(A), np.ascontiguousarray(idx, dtype=np.int64),
                               float(a), float(c))


def systematic_resample(w, u):
    """Systematic resampling indices for normalised weights ``w`` and offset ``u`` in [0, 1)."""
    return _active.systematic_resample(_f64(w), float(u))


def relaxed_step(X, alpha, u_branch, u_pos):
    """Advance the (0, 1) chain given branch uniforms in [0, 1) and position uniforms in (0, 1]."""
    return _active.relaxed_step(_f64(X), float(alpha), _f64(u_branch), _f64(u_pos))
