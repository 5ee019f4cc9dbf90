"""Dense linear algebra over GF(2) on uint8 0/1 arrays."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, SingularMatrixError


def _as_bits(m) -> np.ndarray:
    return (np.asarray(m) & 1).astype(np.uint8)


def matvec(m, x) -> np.ndarray:
    """M @ x mod 2; ``x`` may be a vector or a (batch, n) array of row vectors."""
    m, x = _as_bits(m), _as_bits(x)
    if m.shape[1] != x.shape[-1]:
        raise DimensionMismatchError(f"matrix has {m.shape[1]} columns, vector has {x.shape[-1]} entries")
    return ((x.astype(np.int64) @ m.T.astype(np.int64)) & 1).astype(np.uint8)


def matmul(a, b) -> np.ndarray:
    a, b = _as_bits(a), _as_bits(b)
    return ((a.astype(np.int64) @ b.astype(np.int64)) & 1).astype(np.uint8)


def rank(m) -> int:
    a = _as_bits(m).copy()
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        pivots = np.nonzero(a[r:, c])[0]
        if pivots.size == 0:
            continue
        p = r + pivots[0]
        a[[r, p]] = a[[p, r]]
        mask = a[:, c].astype(bool)
        mask[r] = False
        a[mask] ^= a[r]
        r += 1
        if r == rows:
            break
    return r


def inverse(m) -> np.ndarray:
    """Gauss-Jordan inverse; raises ``SingularMatrixError`` if rank-deficient."""
    a = _as_bits(m)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatchError("only square matrices have inverses")
    aug = np.concatenate([a, np.eye(n, dtype=np.uint8)], axis=1)
    for c in range(n):
        pivots = np.nonzero(aug[c:, c])[0]
        if pivots.size == 0:
            raise SingularMatrixError("matrix is singular over GF(2)")
        p = c + pivots[0]
        aug[[c, p]] = aug[[p, c]]
        mask = aug[:, c].astype(bool)
        mask[c] = False
        aug[mask] ^= aug[c]
    return aug[:, n:].copy()


def is_invertible(m) -> bool:
    a = np.asarray(m)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and rank(a) == a.shape[0]


def random_invertible(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over GL(n, 2) by rejection (about 29% of random matrices are invertible)."""
    while True:
        m = rng.integers(0, 2, size=(n, n), dtype=np.uint8)
        if rank(m) == n:
            return m


def banded_invertible(n: int, rng: np.random.Generator, bandwidth: int = 2, density: float = 0.75) -> np.ndarray:
    """L @ U with unit-diagonal triangular factors whose off-diagonals sit within ``bandwidth``.

    At the defaults the product averages about 2.35 off-diagonal ones per row,
    close to the most this band allows once GF(2) cancellation is counted.
    """
    lower = np.eye(n, dtype=np.uint8)
    upper = np.eye(n, dtype=np.uint8)
    for d in range(1, bandwidth + 1):
        if d >= n:
            break
        idx = np.arange(n - d)
        lower[idx + d, idx] = rng.random(n - d) < density
        upper[idx, idx + d] = rng.random(n - d) < density
    return matmul(lower, upper)
