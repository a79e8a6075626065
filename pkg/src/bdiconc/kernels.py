"""Numeric hot loops, with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``BDICONC_NUMBA`` is not set
to ``0``. Both paths release the GIL inside the spin loop, so CPU-bound
``busy-spin`` actions scale across carriers on multi-core hosts.
"""
import os
import time

import numpy as np

_SPIN_CHUNK = 20_000
_NP_CHUNK = 4_096

_jit = None
_jit_checked = False


def numba_enabled():
    return os.environ.get("BDICONC_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def _jit_module():
    global _jit, _jit_checked
    if not numba_enabled():
        return None
    if not _jit_checked:
        _jit_checked = True
        try:
            from . import _jit as mod
        except ImportError:
            mod = None
        _jit = mod
    return _jit


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if _jit_module() is not None else "numpy"


def _numpy_spin_chunk(buf):
    # ufunc inner loops run without the GIL for float64
    np.multiply(buf, 1.000000119, out=buf)
    np.add(buf, 1e-9, out=buf)
    np.subtract(buf, 1.0, out=buf, where=buf > 2.0)


def spin(seconds, use_numba=None):
    """Burn at least ``seconds`` of CPU time on the calling thread.

    Returns the CPU seconds actually consumed.
    """
    if seconds <= 0:
        return 0.0
    jit = _jit_module() if use_numba in (None, True) else None
    start = time.thread_time()
    if jit is not None:
        acc = 1.0
        while time.thread_time() - start < seconds:
            acc = jit.spin_chunk(_SPIN_CHUNK, acc)
    else:
        buf = np.ones(_NP_CHUNK)
        while time.thread_time() - start < seconds:
            _numpy_spin_chunk(buf)
    return time.thread_time() - start


def incidence(rows, cols, n_rows=None, n_cols=None, use_numba=None):
    """Count co-occurrences of integer codes: ``out[r, c] = #{k: rows[k]=r, cols[k]=c}``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise ValueError("rows and cols must have the same length")
    if n_rows is None:
        n_rows = int(rows.max()) + 1 if rows.size else 0
    if n_cols is None:
        n_cols = int(cols.max()) + 1 if cols.size else 0
    jit = _jit_module() if use_numba in (None, True) else None
    if jit is not None:
        return jit.incidence(rows, cols, n_rows, n_cols)
    out = np.zeros((n_rows, n_cols), dtype=np.int64)
    np.add.at(out, (rows, cols), 1)
    return out
