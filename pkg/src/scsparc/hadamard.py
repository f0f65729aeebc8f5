"""Fast Walsh-Hadamard transform and sub-sampled Hadamard blocks."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# largest factor applied as a dense matmul; keeps the cost O(k log k)
_MAX_FACTOR_BITS = 6


def is_power_of_2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def next_power_of_2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


@lru_cache(maxsize=None)
def _small_hadamard(bits: int) -> np.ndarray:
    h = np.ones((1, 1))
    for _ in range(bits):
        h = np.block([[h, h], [h, -h]])
    h.setflags(write=False)
    return h


def _chunks(n: int) -> list[int]:
    if n == 0:
        return []
    parts = -(-n // _MAX_FACTOR_BITS)
    base, extra = divmod(n, parts)
    return [base + 1] * extra + [base] * (parts - extra)


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along the last axis.

    Uses natural (Sylvester) ordering, so ``fwht(np.eye(k))`` is the
    symmetric +/-1 Hadamard matrix of order k.  The order-k matrix is the
    Kronecker product of small Hadamard factors (at most 64 x 64); each
    factor is applied along its own axis of the reshaped input, which costs
    O(k log k) per transform while letting BLAS do the arithmetic.
    """
    a = np.asarray(a, dtype=float)
    shape = a.shape
    k = shape[-1]
    if not is_power_of_2(k):
        raise ValueError(f"transform length {k} is not a power of two")
    sizes = [1 << c for c in _chunks(k.bit_length() - 1)]
    x = a.reshape((-1, *sizes)) if sizes else a.reshape(-1, 1).copy()
    for axis, bits in enumerate(_chunks(k.bit_length() - 1), start=1):
        h = _small_hadamard(bits)
        x = np.swapaxes(np.swapaxes(x, axis, -1) @ h, axis, -1)
    return np.ascontiguousarray(x).reshape(shape)


def hadamard_matrix(k: int) -> np.ndarray:
    """Dense Sylvester Hadamard matrix (for tests and small problems)."""
    return fwht(np.eye(k))
