"""Seeded simulation of state paths and count observations."""

import numpy as np

DEFAULT_CHUNK = 10_000


def simulate_chunks(process, theta, T, rng, chunk=DEFAULT_CHUNK):
    """Yield ``(X, Y)`` blocks of at most ``chunk`` rows covering ``T`` steps.

    State and Poisson draws are interleaved block by block, so the output
    depends on ``chunk``; keep it fixed for reproducibility.
    """
    psi, B = theta.psi, theta.B
    x = None
    done = 0
    while done < T:
        n = min(chunk, T - done)
        X = np.empty((n, process.K))
        for i in range(n):
            if x is None:
                x = process.initial_sample(psi, 1, rng)
            else:
                x = process.transition_sample(psi, x, rng)
            X[i] = x[0]
        Z = rng.poisson(B[None, :, :] * X[:, None, :])
        yield X, Z.sum(axis=2)
        done += n


def simulate(process, theta, T, rng, chunk=DEFAULT_CHUNK):
    """In-memory ``(X, Y)`` with shapes ``(T, K)`` and ``(T, M)``."""
    parts = list(simulate_chunks(process, theta, T, rng, chunk))
    if not parts:
        return np.empty((0, process.K)), np.empty((0, theta.M), dtype=np.int64)
    X, Y = zip(*parts)
    return np.concatenate(X), np.concatenate(Y)


def random_basis(M, K, rng, low=0.5, high=5.0):
    """Ground-truth ``B`` with i.i.d. uniform entries on ``[low, high]``."""
    return rng.uniform(low, high, size=(M, K))
