"""numba-compiled variants of the kernels in :mod:`bdiconc.kernels`.

Imported lazily: numba adds ~0.4 s to interpreter start-up, which matters
for 1A1P child processes that never spin.
"""
import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def spin_chunk(n, seed):
    acc = seed
    for i in range(n):
        acc = acc * 1.000000119 + 1e-9
        if acc > 2.0:
            acc -= 1.0
    return acc


@njit(cache=True)
def incidence(rows, cols, n_rows, n_cols):
    out = np.zeros((n_rows, n_cols), dtype=np.int64)
    for k in range(rows.shape[0]):
        out[rows[k], cols[k]] += 1
    return out
