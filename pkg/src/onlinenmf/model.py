"""Poisson observation model with latent multinomial allocations.

Counts ``y(m) = sum_k Z(m, k)`` where ``Z(m, k) ~ Poisson(B(m, k) x(k))``.
Given ``(x, y)`` each row of ``Z`` is multinomial with probabilities
proportional to ``B(m, k) x(k)``.
"""

import math

import numpy as np
from scipy.special import gammaln

from . import kernels


class DomainError(ValueError):
    """Argument outside the support of a density or process."""


class DegenerateIntensityError(ValueError):
    """A row intensity ``B(m, .) x`` is zero where a positive value is needed."""


def poisson_logpmf(v, lam):
    """Log of the Poisson pmf ``v log(lam) - lam - log(v!)``.

    ``lam == 0`` gives ``0`` for ``v == 0`` and ``-inf`` otherwise.
    """
    if v < 0 or int(v) != v:
        raise DomainError(f"count must be a nonnegative integer, got {v!r}")
    if lam < 0 or math.isnan(lam):
        raise DomainError(f"intensity must be nonnegative, got {lam!r}")
    if lam == 0:
        return 0.0 if v == 0 else -math.inf
    return v * math.log(lam) - lam - math.lgamma(v + 1)


def _check_dims(B, x, y=None):
    B = np.asarray(B, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if B.ndim != 2 or x.ndim != 1 or B.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: B {B.shape}, x {x.shape}")
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (B.shape[0],):
            raise ValueError(f"shape mismatch: B {B.shape}, y {y.shape}")
    return B, x, y


def obs_loglik(B, x, y):
    """Multivariate Poisson log-density ``log g_B(y | x)``."""
    B, x, y = _check_dims(B, x, y)
    lam = B @ x
    with np.errstate(divide="ignore", invalid="ignore"):
        ylog = np.where(y > 0, y * np.log(lam), 0.0)
    return float(np.sum(ylog - lam - gammaln(y + 1.0)))


def allocation_probs(B, x, m):
    B, x, _ = _check_dims(B, x)
    w = B[m] * x
    total = w.sum()
    if not total > 0:
        raise DegenerateIntensityError(f"row {m} has zero intensity")
    return w / total


def allocation_posterior_mean(B, x, y):
    """``E[Z | x, y] = B * (y x^T) / ((B x) 1^T)``; rows with ``y(m) == 0`` are zero."""
    B, x, y = _check_dims(B, x, y)
    lam = B @ x
    if np.any((lam <= 0) & (y > 0)):
        raise DegenerateIntensityError("zero intensity on a row with a positive count")
    return kernels.allocation_tensor(B, x[None, :], y)[0]


def simulate_observation(B, x, rng):
    """Draw ``(Z, y)`` given the state ``x``."""
    B, x, _ = _check_dims(B, x)
    Z = rng.poisson(B * x[None, :])
    return Z, Z.sum(axis=1)
