"""Boolean time-series kernels backing the point-semantics oracle.

Each kernel maps child truth arrays (index ``i`` is year ``u_lo + i``) to the
parent's truth array. Reads past the end of an array count as ``False``.

Two implementations exist: numba ``@njit`` loops and vectorised numpy. The
numba path is used when numba imports and ``FCHPROBE_NUMBA`` is not ``0``.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev environment
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return decorator


def _shifted(a: np.ndarray, d: int) -> np.ndarray:
    """``out[i] = a[i + d]`` with ``False`` past the end."""
    out = np.zeros_like(a)
    if d < len(a):
        out[: len(a) - d] = a[d:]
    return out


# --- numpy ------------------------------------------------------------------


def finally_np(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    n = len(a)
    if n == 0:
        return a.copy()
    # prefix[i] = number of true entries in a[:i]; pad so windows may run off the end
    prefix = np.zeros(n + hi + 2, dtype=np.int64)
    prefix[1 : n + 1] = np.cumsum(a)
    prefix[n + 1 :] = prefix[n]
    idx = np.arange(n)
    return (prefix[idx + hi + 1] - prefix[idx + lo]) > 0


def globally_np(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    n = len(a)
    if n == 0:
        return a.copy()
    prefix = np.zeros(n + hi + 2, dtype=np.int64)
    prefix[1 : n + 1] = np.cumsum(a)
    prefix[n + 1 :] = prefix[n]
    idx = np.arange(n)
    counts = prefix[idx + hi + 1] - prefix[idx + lo]
    return counts == (hi - lo + 1)


def next_np(a: np.ndarray) -> np.ndarray:
    return _shifted(a, 1)


def until_np(a: np.ndarray, b: np.ndarray, lo: int, hi: int) -> np.ndarray:
    out = np.zeros_like(a)
    alive = np.ones_like(a)
    for d in range(hi + 1):
        if d >= 2:
            alive &= _shifted(a, d - 1)
            if not alive.any():
                break
        if d >= lo:
            out |= alive & _shifted(b, d)
    return out


# --- numba ------------------------------------------------------------------


@njit(cache=True)
def finally_nb(a, lo, hi):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        for d in range(lo, hi + 1):
            k = t + d
            if k >= n:
                break
            if a[k]:
                out[t] = True
                break
    return out


@njit(cache=True)
def globally_nb(a, lo, hi):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        ok = True
        for d in range(lo, hi + 1):
            k = t + d
            if k >= n or not a[k]:
                ok = False
                break
        out[t] = ok
    return out


@njit(cache=True)
def next_nb(a):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for t in range(n - 1):
        out[t] = a[t + 1]
    return out


@njit(cache=True)
def until_nb(a, b, lo, hi):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        for d in range(hi + 1):
            k = t + d
            if k >= n:
                break
            # the left operand must hold strictly between t and t + d
            if d >= 2 and not a[k - 1]:
                break
            if d >= lo and b[k]:
                out[t] = True
                break
    return out


def use_numba() -> bool:
    return HAVE_NUMBA and os.environ.get("FCHPROBE_NUMBA", "1") != "0"


def backend() -> dict:
    """Kernel table for the active backend, resolved at call time."""
    if use_numba():
        return {"F": finally_nb, "G": globally_nb, "N": next_nb, "U": until_nb}
    return {"F": finally_np, "G": globally_np, "N": next_np, "U": until_np}
