"""Parameter containers, step sizes and maximisation rules."""

from dataclasses import dataclass, field

import numpy as np

B_FLOOR = 1e-8
S1_MIN = 1e-12


@dataclass(frozen=True)
class ThetaParams:
    """Full parameter: the ``M x K`` basis matrix and the state-process parameters."""

    B: np.ndarray
    psi: object

    def __post_init__(self):
        B = np.array(self.B, dtype=np.float64)
        if B.ndim != 2 or np.any(B < 0) or not np.all(np.isfinite(B)):
            raise ValueError("B must be a finite nonnegative matrix")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @property
    def M(self):
        return self.B.shape[0]

    @property
    def K(self):
        return self.B.shape[1]

    def replace(self, B=None, psi=None):
        return ThetaParams(self.B if B is None else B, self.psi if psi is None else psi)


@dataclass
class SuffStats:
    """Expected additive statistics: ``S1`` (K,), ``S2`` (M, K), ``S3`` (J,)."""

    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def scaled(self, c):
        return SuffStats(self.S1 * c, self.S2 * c, self.S3 * c)


@dataclass(frozen=True)
class StepSizeSchedule:
    """``gamma_t = (t + offset) ** -exponent`` with ``0.5 < exponent <= 1``."""

    exponent: float = 0.8
    offset: int = 0

    def __post_init__(self):
        if not 0.5 < self.exponent <= 1.0:
            raise ValueError(f"step exponent must lie in (0.5, 1], got {self.exponent}")
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")

    def __call__(self, t):
        return step_size(self, t)


def step_size(schedule, t):
    if t < 1:
        raise ValueError(f"time index must be >= 1, got {t}")
    return float((t + schedule.offset) ** -schedule.exponent)


def mstep_B(S1, S2, B_prev=None):
    """``B = S2 / (1 S1^T)`` floored at ``B_FLOOR``.

    Columns with ``S1[k] <= 1e-12`` keep their values from ``B_prev``
    (or are left at the floor when there is no previous matrix).
    """
    S1 = np.asarray(S1, dtype=np.float64)
    S2 = np.asarray(S2, dtype=np.float64)
    ok = S1 > S1_MIN
    B = np.empty_like(S2)
    B[:, ok] = S2[:, ok] / S1[ok]
    if B_prev is None:
        B[:, ~ok] = B_FLOOR
    else:
        B[:, ~ok] = np.asarray(B_prev)[:, ~ok]
    return np.maximum(B, B_FLOOR)


def mstep_psi(process, S3, psi_prev):
    return process.lam(S3, psi_prev)


def mstep(process, theta, stats, estimate_B=True, estimate_psi=True):
    """One maximisation step; frozen components are passed through untouched."""
    B = mstep_B(stats.S1, stats.S2, theta.B) if estimate_B else theta.B
    psi = mstep_psi(process, stats.S3, theta.psi) if estimate_psi else theta.psi
    return ThetaParams(B, psi)
