"""Recovery metrics for estimated bases.

Columns of ``B`` are identifiable only up to a relabelling of the latent
coordinates, so errors are reported after matching estimated columns to
true ones.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class AlignmentReport:
    """Errors of ``B_est[:, permutation]`` against ``B_true``.

    ``permutation[k]`` is the estimated column matched to true column ``k``.
    """

    permutation: np.ndarray
    abs_err: np.ndarray
    rel_err: np.ndarray

    @property
    def max_abs(self):
        return float(self.abs_err.max()) if self.abs_err.size else 0.0

    @property
    def mean_abs(self):
        return float(self.abs_err.mean()) if self.abs_err.size else 0.0

    @property
    def max_rel(self):
        return float(self.rel_err.max()) if self.rel_err.size else 0.0

    @property
    def mean_rel(self):
        return float(self.rel_err.mean()) if self.rel_err.size else 0.0

    def as_dict(self):
        return {
            "permutation": ",".join(str(int(j) + 1) for j in self.permutation),
            "max_abs_error": self.max_abs,
            "mean_abs_error": self.mean_abs,
            "max_rel_error": self.max_rel,
            "mean_rel_error": self.mean_rel,
        }


def matching_cost(B_est, B_true):
    """``cost[j, k] = sum_m (B_est[m, j] - B_true[m, k])**2``."""
    d = B_est[:, :, None] - B_true[:, None, :]
    return np.einsum("mjk,mjk->jk", d, d)


def align_columns(B_est, B_true):
    """Column permutation of ``B_est`` minimising the squared error to ``B_true``.

    Solved as a linear assignment problem, which is exact for any ``K``.
    Relative errors divide by ``|B_true|`` and are ``inf`` where the truth is
    zero and the estimate is not.
    """
    B_est = np.asarray(B_est, dtype=np.float64)
    B_true = np.asarray(B_true, dtype=np.float64)
    if B_est.shape != B_true.shape or B_est.ndim != 2:
        raise ValueError(f"shape mismatch: {B_est.shape} vs {B_true.shape}")
    # solve on a canonical column order so ties between equal-cost matchings
    # are broken the same way however the estimate's columns are ordered
    order = np.lexsort(B_est[::-1])
    rows, cols = linear_sum_assignment(matching_cost(B_est[:, order], B_true))
    perm = np.empty(B_true.shape[1], dtype=np.int64)
    perm[cols] = order[rows]
    aligned = B_est[:, perm]
    abs_err = np.abs(aligned - B_true)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rel_err = np.where(abs_err == 0, 0.0, abs_err / np.abs(B_true))
    return AlignmentReport(perm, abs_err, rel_err)


def psi_error(psi_est, psi_true):
    """Componentwise absolute error of the state-process parameters."""
    return np.abs(np.subtract(psi_est.as_tuple(), psi_true.as_tuple()))
