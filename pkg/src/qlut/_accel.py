"""Hot loops of the likelihood engine.

Every kernel exists twice: a numba ``@njit`` version and a vectorized numpy
version with identical semantics. Set ``QLUT_NUMBA=0`` in the environment
(before import) to force the numpy path; it is also used when numba is not
importable.

Conventions shared by all kernels
---------------------------------
codes
    Windows as ``int64`` arrays of 0-based code indices, oldest sample first.
lower, upper
    Cell edges per 0-based code (``-inf`` / ``+inf`` at the ends).
table
    ``(N, K, P)`` array with ``log P(code k at window slot n | node p)``.
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erfc, logsumexp

_FLAG = os.environ.get("QLUT_NUMBA", "1").strip().lower()
try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

if numba is not None and "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe, which warns on hosts with an old TBB
    numba.config.THREADING_LAYER = "omp"

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"

_SQRT2 = math.sqrt(2.0)
_SQRTPI = math.sqrt(math.pi)
_LOG_HALF = math.log(0.5)
# above this erfc is replaced by its asymptotic series (error < 1e-10)
_ASYM = 25.0


# ---------------------------------------------------------------- numpy path

def _cell_prob_np(lower, upper, s, sigma):
    """P(lower < s + W < upper) for W ~ N(0, sigma^2), tail-accurate."""
    lo = np.asarray(lower, dtype=float) - s
    hi = np.asarray(upper, dtype=float) - s
    if sigma == 0.0:
        inside = (lo < 0) & (hi > 0)
        edge = (lo == 0) | (hi == 0)
        return np.where(inside, 1.0, np.where(edge, 0.5, 0.0))
    a = lo / (sigma * _SQRT2)
    b = hi / (sigma * _SQRT2)
    with np.errstate(invalid="ignore"):
        right = 0.5 * (erfc(a) - erfc(b))
        left = 0.5 * (erfc(-b) - erfc(-a))
        mid = 1.0 - 0.5 * erfc(-a) - 0.5 * erfc(b)
    p = np.where(a >= 0, right, np.where(b <= 0, left, mid))
    return np.clip(p, 0.0, 1.0)


def _log_erfc_np(x):
    """log erfc(x) without underflow for large positive x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    big = x >= _ASYM
    with np.errstate(divide="ignore"):
        out[~big] = np.log(erfc(x[~big]))
    xb = x[big]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 1.0 / (2.0 * xb * xb)
        series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)))
        out[big] = np.where(np.isinf(xb), -np.inf, -xb * xb - np.log(xb * _SQRTPI) + np.log(series))
    return out


def _log_tail_diff_np(a, b):
    """log(0.5 * (erfc(a) - erfc(b))) for 0 <= a < b."""
    la = _log_erfc_np(a)
    lb = _log_erfc_np(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _LOG_HALF + la + np.log1p(-np.exp(lb - la))


def _cell_logprob_np(lower, upper, s, sigma):
    lo = np.asarray(lower, dtype=float) - s
    hi = np.asarray(upper, dtype=float) - s
    if sigma == 0.0:
        with np.errstate(divide="ignore"):
            return np.log(_cell_prob_np(lower, upper, s, sigma))
    a, b = np.broadcast_arrays(lo / (sigma * _SQRT2), hi / (sigma * _SQRT2))
    out = np.empty(a.shape)
    right = a >= 0
    left = ~right & (b <= 0)
    mid = ~right & ~left
    out[right] = _log_tail_diff_np(a[right], b[right])
    out[left] = _log_tail_diff_np(-b[left], -a[left])
    with np.errstate(divide="ignore"):
        pm = 1.0 - 0.5 * erfc(-a[mid]) - 0.5 * erfc(b[mid])
        out[mid] = np.log(np.clip(pm, 0.0, 1.0))
    return np.minimum(out, 0.0)


def build_table_np(samples, lower, upper, sigma):
    """``samples`` is ``(P, N)``; returns the ``(N, K, P)`` log table."""
    s = np.asarray(samples, dtype=float).T  # (N, P)
    return _cell_logprob_np(lower[None, :, None], upper[None, :, None], s[:, None, :], sigma)


def grid_loglik_table_np(table, logv, codes, chunk=256):
    n_win, n = codes.shape
    n_x0, n_inner = logv.shape
    out = np.empty((n_win, n_x0))
    for start in range(0, n_win, chunk):
        c = codes[start:start + chunk]
        acc = np.zeros((c.shape[0], table.shape[2]))
        for m in range(n):
            acc += table[m, c[:, m], :]
        acc = acc.reshape(c.shape[0], n_x0, n_inner) + logv[None]
        out[start:start + chunk] = logsumexp(acc, axis=2)
    return out


def grid_loglik_direct_np(samples, logv, codes, lower, upper, sigma, chunk=16):
    """``samples`` is ``(I, J, N)``; evaluates cell probabilities on the fly."""
    n_win, n = codes.shape
    out = np.empty((n_win, samples.shape[0]))
    for start in range(0, n_win, chunk):
        c = codes[start:start + chunk]
        lo = lower[c][:, None, None, :]
        hi = upper[c][:, None, None, :]
        ll = _cell_logprob_np(lo, hi, samples[None], sigma).sum(axis=3) + logv[None]
        out[start:start + chunk] = logsumexp(ll, axis=2)
    return out


def point_loglik_np(samples, logv, codes, lower, upper, sigma):
    """``samples`` is ``(W, J, N)``, one node set per window; returns ``(W,)``."""
    lo = lower[codes][:, None, :]
    hi = upper[codes][:, None, :]
    ll = _cell_logprob_np(lo, hi, samples, sigma).sum(axis=2) + logv
    return logsumexp(ll, axis=1)


# ---------------------------------------------------------------- numba path

if numba is not None:

    @numba.njit(cache=True, inline="always")
    def _log_erfc_nb(x):
        if x < _ASYM:
            v = math.erfc(x)
            return math.log(v) if v > 0.0 else -np.inf
        if x == np.inf:
            return -np.inf
        r = 1.0 / (2.0 * x * x)
        series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)))
        return -x * x - math.log(x * _SQRTPI) + math.log(series)

    @numba.njit(cache=True, inline="always")
    def _log_tail_diff_nb(a, b):
        la = _log_erfc_nb(a)
        if la == -np.inf:
            return -np.inf
        e = math.exp(_log_erfc_nb(b) - la)
        if e >= 1.0:
            return -np.inf
        return _LOG_HALF + la + math.log1p(-e)

    @numba.njit(cache=True, inline="always")
    def _cell_logprob_nb(lo_edge, hi_edge, s, sigma):
        lo = lo_edge - s
        hi = hi_edge - s
        if sigma == 0.0:
            if lo < 0.0 and hi > 0.0:
                return 0.0
            if lo == 0.0 or hi == 0.0:
                return math.log(0.5)
            return -np.inf
        a = lo / (sigma * _SQRT2)
        b = hi / (sigma * _SQRT2)
        if a >= 0.0:
            v = _log_tail_diff_nb(a, b)
        elif b <= 0.0:
            v = _log_tail_diff_nb(-b, -a)
        else:
            p = 1.0 - 0.5 * math.erfc(-a) - 0.5 * math.erfc(b)
            if p <= 0.0:
                return -np.inf
            v = math.log(p)
        return min(v, 0.0)

    @numba.njit(cache=True)
    def _logsumexp_nb(v):
        m = -np.inf
        for x in v:
            if x > m:
                m = x
        if m == -np.inf:
            return -np.inf
        acc = 0.0
        for x in v:
            acc += math.exp(x - m)
        return m + math.log(acc)

    @numba.njit(cache=True)
    def build_table_nb(samples, lower, upper, sigma):
        n_nodes, n = samples.shape
        k = lower.shape[0]
        out = np.empty((n, k, n_nodes))
        for m in range(n):
            for c in range(k):
                lo = lower[c]
                hi = upper[c]
                for p in range(n_nodes):
                    out[m, c, p] = _cell_logprob_nb(lo, hi, samples[p, m], sigma)
        return out

    @numba.njit(cache=True, parallel=True)
    def grid_loglik_table_nb(table, logv, codes):
        n_win, n = codes.shape
        n_x0, n_inner = logv.shape
        out = np.empty((n_win, n_x0))
        for w in numba.prange(n_win):
            buf = np.empty(n_inner)
            for i in range(n_x0):
                base = i * n_inner
                for j in range(n_inner):
                    acc = logv[i, j]
                    for m in range(n):
                        acc += table[m, codes[w, m], base + j]
                    buf[j] = acc
                out[w, i] = _logsumexp_nb(buf)
        return out

    @numba.njit(cache=True, parallel=True)
    def grid_loglik_direct_nb(samples, logv, codes, lower, upper, sigma):
        n_win, n = codes.shape
        n_x0, n_inner = logv.shape
        out = np.empty((n_win, n_x0))
        for w in numba.prange(n_win):
            buf = np.empty(n_inner)
            for i in range(n_x0):
                for j in range(n_inner):
                    acc = logv[i, j]
                    for m in range(n):
                        c = codes[w, m]
                        acc += _cell_logprob_nb(lower[c], upper[c], samples[i, j, m], sigma)
                        if acc == -np.inf:
                            break
                    buf[j] = acc
                out[w, i] = _logsumexp_nb(buf)
        return out

    @numba.njit(cache=True, parallel=True)
    def point_loglik_nb(samples, logv, codes, lower, upper, sigma):
        n_win, n_inner, n = samples.shape
        out = np.empty(n_win)
        for w in numba.prange(n_win):
            buf = np.empty(n_inner)
            for j in range(n_inner):
                acc = logv[w, j]
                for m in range(n):
                    c = codes[w, m]
                    acc += _cell_logprob_nb(lower[c], upper[c], samples[w, j, m], sigma)
                    if acc == -np.inf:
                        break
                buf[j] = acc
            out[w] = _logsumexp_nb(buf)
        return out


# ---------------------------------------------------------------- dispatch

def _as_codes(codes):
    return np.ascontiguousarray(codes, dtype=np.int64)


def _pick(backend):
    backend = backend or BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and numba is None:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def build_table(samples, lower, upper, sigma, backend=None):
    backend = _pick(backend)
    samples = np.ascontiguousarray(samples, dtype=float)
    lower = np.ascontiguousarray(lower, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    if backend == "numba":
        return build_table_nb(samples, lower, upper, float(sigma))
    return build_table_np(samples, lower, upper, float(sigma))


def grid_loglik_table(table, logv, codes, backend=None):
    backend = _pick(backend)
    codes = _as_codes(codes)
    logv = np.ascontiguousarray(logv, dtype=float)
    if backend == "numba":
        return grid_loglik_table_nb(table, logv, codes)
    return grid_loglik_table_np(table, logv, codes)


def grid_loglik_direct(samples, logv, codes, lower, upper, sigma, backend=None):
    backend = _pick(backend)
    args = (
        np.ascontiguousarray(samples, dtype=float),
        np.ascontiguousarray(logv, dtype=float),
        _as_codes(codes),
        np.ascontiguousarray(lower, dtype=float),
        np.ascontiguousarray(upper, dtype=float),
        float(sigma),
    )
    if backend == "numba":
        return grid_loglik_direct_nb(*args)
    return grid_loglik_direct_np(*args)


def point_loglik(samples, logv, codes, lower, upper, sigma, backend=None):
    backend = _pick(backend)
    args = (
        np.ascontiguousarray(samples, dtype=float),
        np.ascontiguousarray(logv, dtype=float),
        _as_codes(codes),
        np.ascontiguousarray(lower, dtype=float),
        np.ascontiguousarray(upper, dtype=float),
        float(sigma),
    )
    if backend == "numba":
        return point_loglik_nb(*args)
    return point_loglik_np(*args)
