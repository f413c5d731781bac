"""Markov state processes driving the columns of X.

Two concrete processes are provided:

* :class:`BasisSelectionProcess` -- every coordinate is an independent
  two-state chain on {0, 1} with ``p = P(0 -> 0)`` and ``q = P(1 -> 1)``.
  The state space is finite (``2**K`` states), so exact inference applies.
* :class:`RelaxedProcess` -- every coordinate lives on (0, 1) and moves to
  ``U(0, x)`` with probability ``rho(x)`` or to ``U(x, 1)`` otherwise, where
  ``rho(x) = alpha`` for ``x <= 0.5`` and ``1 - alpha`` above.

Process methods operate on arrays whose last axis is the K coordinates and
broadcast over leading axes.  The module-level functions are the checked
scalar-level versions of the same formulas.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .kernels import UNIT_CAP
from .model import DomainError

PARAM_CLAMP = 1e-6
MAX_ENUM_K = 20


@dataclass(frozen=True)
class BasisSelectionParams:
    p: float
    q: float

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")

    def as_tuple(self):
        return (self.p, self.q)


@dataclass(frozen=True)
class RelaxedParams:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    def as_tuple(self):
        return (self.alpha,)


def _clamp(v):
    return min(max(float(v), PARAM_CLAMP), 1.0 - PARAM_CLAMP)


def enumerate_states(K, cap=MAX_ENUM_K):
    """All ``2**K`` binary vectors; row ``i`` is the binary expansion of ``i`` (MSB first)."""
    if K < 1:
        raise ValueError("K must be positive")
    if K > cap:
        raise ValueError(f"K={K} exceeds the enumeration cap {cap}")
    idx = np.arange(2 ** K)[:, None]
    shifts = np.arange(K - 1, -1, -1)[None, :]
    return ((idx >> shifts) & 1).astype(np.int64)


def _as_binary(x):
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise DomainError("basis-selection states must be binary")
    return x.astype(np.float64)


def _as_open_unit(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise DomainError("relaxed states must lie strictly inside (0, 1)")
    return x


# ------------------------------------------------------------ basis selection

def _basis_logprob(p, q, x, x_new):
    stay0 = (1 - x) * (1 - x_new)
    up = (1 - x) * x_new
    stay1 = x * x_new
    down = x * (1 - x_new)
    return (stay0 * np.log(p) + up * np.log1p(-p)
            + stay1 * np.log(q) + down * np.log1p(-q)).sum(axis=-1)


def _basis_s3(x_prev, x, denominator):
    ref = x if denominator == "current" else x_prev
    x_prev, x, ref = np.broadcast_arrays(x_prev, x, ref)
    return np.stack([
        ((1 - x_prev) * (1 - x)).sum(axis=-1),
        (1 - ref).sum(axis=-1),
        (x_prev * x).sum(axis=-1),
        ref.sum(axis=-1),
    ], axis=-1)


def basis_transition_logprob(params, x, x_new):
    """``sum_k log P(x(k) -> x_new(k))``."""
    x, x_new = _as_binary(x), _as_binary(x_new)
    if x.shape[-1] != x_new.shape[-1]:
        raise ValueError("state lengths differ")
    return _basis_logprob(params.p, params.q, x, x_new)


def basis_s3(x_prev, x, denominator="current"):
    """Transition indicators summed over coordinates.

    Returns ``[#(0,0), #zeros, #(1,1), #ones]`` where the zero/one occupancy
    counts are taken at the current state (``denominator="current"``) or at
    the previous one (``"previous"``, the exact complete-data MLE).
    """
    x_prev, x = _as_binary(x_prev), _as_binary(x)
    if denominator not in ("current", "previous"):
        raise ValueError(f"unknown s3 denominator {denominator!r}")
    return _basis_s3(x_prev, x, denominator)


def basis_lambda(S3):
    """Maximiser ``(S3[0]/S3[1], S3[2]/S3[3])``, clamped to [1e-6, 1 - 1e-6].

    A component whose denominator is not positive comes back as ``None``,
    meaning the caller keeps its current value.
    """
    S3 = np.asarray(S3, dtype=np.float64)
    p = _clamp(S3[0] / S3[1]) if S3[1] > 0 else None
    q = _clamp(S3[2] / S3[3]) if S3[3] > 0 else None
    return p, q


# -------------------------------------------------------------------- relaxed

def _down_branch(x, x_new):
    # ties go down, except at the largest double below 1 where no up-move is representable
    return (x_new < x) | ((x_new == x) & (x < UNIT_CAP))


def _relaxed_logdensity(alpha, x, x_new):
    rho = np.where(x <= 0.5, alpha, 1.0 - alpha)
    down = _down_branch(x, x_new)
    dens = np.where(down, rho / x, (1.0 - rho) / (1.0 - x))
    return np.log(dens).sum(axis=-1)


def _relaxed_s3(x_prev, x):
    down = _down_branch(x_prev, x)
    inside = np.where(x_prev <= 0.5, down, ~down)
    n_in = inside.sum(axis=-1).astype(np.float64)
    return np.stack([n_in, inside.shape[-1] - n_in], axis=-1)


def relaxed_transition_logdensity(params, x, x_new):
    x, x_new = _as_open_unit(x), _as_open_unit(x_new)
    return _relaxed_logdensity(params.alpha, x, x_new)


def relaxed_sample(params, x, rng):
    """One transition of the (0, 1) chain for each row of ``x``."""
    x = _as_open_unit(x)
    X = np.atleast_2d(x)
    out = kernels.relaxed_step(X, params.alpha, rng.random(X.shape), 1.0 - rng.random(X.shape))
    return out.reshape(x.shape)


def relaxed_s3(x_prev, x):
    """``[#coords in A_{x_prev}, #coords outside]`` for the pair (x_prev, x)."""
    return _relaxed_s3(_as_open_unit(x_prev), _as_open_unit(x))


def relaxed_lambda(S3):
    """``S3[0] / (S3[0] + S3[1])`` clamped, or ``None`` on a zero denominator."""
    S3 = np.asarray(S3, dtype=np.float64)
    total = S3[0] + S3[1]
    if not total > 0:
        return None
    return _clamp(S3[0] / total)


# ------------------------------------------------------------------ processes

class StateProcess:
    """Contract shared by the state processes.

    Subclasses provide initial/transition samplers and log-densities, the
    transition statistic ``s3`` (length ``J``) and its maximiser ``lam``.
    ``finite`` processes additionally expose ``states()`` and the joint
    transition matrix for exact inference.
    """

    K: int
    J: int
    finite = False
    name = ""
    param_names = ()

    def default_params(self):
        raise NotImplementedError

    def make_params(self, values):
        raise NotImplementedError

    def initial_sample(self, psi, n, rng):
        raise NotImplementedError

    def transition_sample(self, psi, X, rng):
        raise NotImplementedError

    def initial_logdensity(self, psi, X):
        raise NotImplementedError

    def transition_logdensity(self, psi, X, X_new):
        raise NotImplementedError

    def s3(self, X_prev, X):
        raise NotImplementedError

    def s3_initial(self, X):
        raise NotImplementedError

    def lam(self, S3, previous):
        """Apply the maximiser, keeping ``previous`` values on degenerate input."""
        raise NotImplementedError


class BasisSelectionProcess(StateProcess):
    """Independent two-state chains per coordinate; uniform initial law.

    The process counts as ``finite`` (exactly enumerable) when ``K`` is at
    most :data:`MAX_ENUM_K`; larger ``K`` still works with particle methods.
    """

    name = "basis"
    param_names = ("p", "q")
    J = 4

    def __init__(self, K, s3_denominator="current"):
        if s3_denominator not in ("current", "previous"):
            raise ValueError(f"unknown s3 denominator {s3_denominator!r}")
        self.K = int(K)
        if self.K < 1:
            raise ValueError("K must be positive")
        self.finite = self.K <= MAX_ENUM_K
        self.s3_denominator = s3_denominator
        self._states = None
        self._s3_pairs = None
        self._powers = 2.0 ** np.arange(self.K - 1, -1, -1)

    def __repr__(self):
        return f"BasisSelectionProcess(K={self.K}, s3_denominator={self.s3_denominator!r})"

    def default_params(self):
        return BasisSelectionParams(0.5, 0.5)

    def make_params(self, values):
        p, q = values
        return BasisSelectionParams(float(p), float(q))

    def states(self):
        if self._states is None:
            self._states = enumerate_states(self.K).astype(np.float64)
            self._states.setflags(write=False)
        return self._states

    def state_index(self, X):
        """Row index into ``states()`` of each binary state in ``X``."""
        return (np.asarray(X) @ self._powers).astype(np.int64)

    def initial_sample(self, psi, n, rng):
        return (rng.random((n, self.K)) < 0.5).astype(np.float64)

    def transition_sample(self, psi, X, rng):
        u = rng.random(X.shape)
        return np.where(X > 0.5, u < psi.q, u >= psi.p).astype(np.float64)

    def initial_logdensity(self, psi, X):
        return np.full(np.shape(X)[:-1], -self.K * np.log(2.0))

    def transition_logdensity(self, psi, X, X_new):
        return _basis_logprob(psi.p, psi.q, X, X_new)

    def s3(self, X_prev, X):
        return _basis_s3(X_prev, X, self.s3_denominator)

    def s3_initial(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape[:-1] + (4,))
        if self.s3_denominator == "current":
            out[..., 1] = (1 - X).sum(axis=-1)
            out[..., 3] = X.sum(axis=-1)
        return out

    def lam(self, S3, previous):
        p, q = basis_lambda(S3)
        return BasisSelectionParams(previous.p if p is None else p,
                                    previous.q if q is None else q)

    # finite-state tables

    def log_initial_probs(self, psi):
        return self.initial_logdensity(psi, self.states())

    def transition_matrix(self, psi):
        """Joint ``2**K x 2**K`` matrix ``P[i, j] = f(state_j | state_i)``."""
        return _basis_transition_matrix(self.K, psi.p, psi.q)

    def s3_pair_table(self):
        """``s3(state_i, state_j)`` for all pairs, shape ``(S, S, 4)``."""
        if self._s3_pairs is None:
            S = self.states()
            self._s3_pairs = self.s3(S[:, None, :], S[None, :, :])
            self._s3_pairs.setflags(write=False)
        return self._s3_pairs

    def s3_initial_table(self):
        return self.s3_initial(self.states())


@lru_cache(maxsize=8)
def _basis_transition_matrix(K, p, q):
    S = enumerate_states(K).astype(np.float64)
    P = np.exp(_basis_logprob(p, q, S[:, None, :], S[None, :, :]))
    P.setflags(write=False)
    return P


class RelaxedProcess(StateProcess):
    """Mixture-of-uniforms chain on (0, 1)^K with ``U(0, 1)`` initial law."""

    finite = False
    name = "relaxed"
    param_names = ("alpha",)
    J = 2

    def __init__(self, K):
        self.K = int(K)

    def __repr__(self):
        return f"RelaxedProcess(K={self.K})"

    def default_params(self):
        return RelaxedParams(0.5)

    def make_params(self, values):
        (alpha,) = values
        return RelaxedParams(float(alpha))

    def initial_sample(self, psi, n, rng):
        # 1 - U[0, 1) keeps draws inside (0, 1]; clip the closed end
        return np.minimum(1.0 - rng.random((n, self.K)), UNIT_CAP)

    def transition_sample(self, psi, X, rng):
        return kernels.relaxed_step(X, psi.alpha, rng.random(X.shape), 1.0 - rng.random(X.shape))

    def initial_logdensity(self, psi, X):
        return np.zeros(np.shape(X)[:-1])

    def transition_logdensity(self, psi, X, X_new):
        return _relaxed_logdensity(psi.alpha, X, X_new)

    def s3(self, X_prev, X):
        return _relaxed_s3(X_prev, X)

    def s3_initial(self, X):
        return np.zeros(np.shape(X)[:-1] + (2,))

    def lam(self, S3, previous):
        alpha = relaxed_lambda(S3)
        return previous if alpha is None else RelaxedParams(alpha)


def make_process(model, K, **kwargs):
    if model == "basis":
        return BasisSelectionProcess(K, **kwargs)
    if model == "relaxed":
        return RelaxedProcess(K)
    raise ValueError(f"unknown model {model!r}")
