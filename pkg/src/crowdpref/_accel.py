"""Hot numeric loops with numba implementations and pure-numpy fallbacks.

Set ``CROWDPREF_DISABLE_NUMBA=1`` before import to force the numpy path. Both
implementations are always importable as ``*_numpy`` / ``*_numba`` so they can
be compared directly; the un-suffixed names point at the active one.
"""
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CROWDPREF_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

_CHUNK_ELEMS = 4_000_000


def _njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


# --------------------------------------------------------------------------- numpy


def scaled_sqdist_numpy(X1, X2, inv_ls):
    """Squared anisotropic distances ``sum_d ((x1_d - x2_d) * inv_ls_d)**2``."""
    A = X1 * inv_ls
    B = X2 * inv_ls
    n1, n2, d = A.shape[0], B.shape[0], A.shape[1]
    out = np.empty((n1, n2))
    step = max(1, _CHUNK_ELEMS // max(1, n2 * d))
    for start in range(0, n1, step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def scaled_sqdist_sym_numpy(X, inv_ls):
    out = scaled_sqdist_numpy(X, X, inv_ls)
    iu = np.triu_indices(out.shape[0], 1)
    out[(iu[1], iu[0])] = out[iu]
    np.fill_diagonal(out, 0.0)
    return out


def abs_diff_median_numpy(col):
    """Median of ``|x_i - x_j|`` over all ordered pairs, i == j included."""
    diffs = np.abs(col[:, None] - col[None, :])
    return float(np.median(diffs))


def nonzero_abs_diff_median_numpy(col):
    diffs = np.abs(col[:, None] - col[None, :]).ravel()
    diffs = diffs[diffs > 0]
    if diffs.size == 0:
        return 0.0
    return float(np.median(diffs))


def pair_row_quad_numpy(A, idx_a, idx_b, S):
    """``d_p^T S d_p`` with ``d_p = A[a_p] - A[b_p]`` for every pair."""
    D = A[idx_a] - A[idx_b]
    return np.einsum("ij,ij->i", D @ S, D)


# --------------------------------------------------------------------------- numba


@_njit
def scaled_sqdist_numba(X1, X2, inv_ls):
    n1 = X1.shape[0]
    n2 = X2.shape[0]
    d = X1.shape[1]
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(d):
                t = X1[i, k] * inv_ls[k] - X2[j, k] * inv_ls[k]
                acc += t * t
            out[i, j] = acc
    return out


@_njit
def scaled_sqdist_sym_numba(X, inv_ls):
    n = X.shape[0]
    d = X.shape[1]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                t = X[i, k] * inv_ls[k] - X[j, k] * inv_ls[k]
                acc += t * t
            out[i, j] = acc
            out[j, i] = acc
    return out


@_njit
def _abs_diffs_numba(col, skip_zero):
    n = col.shape[0]
    buf = np.empty(n * n)
    m = 0
    for i in range(n):
        for j in range(n):
            v = abs(col[i] - col[j])
            if skip_zero and v == 0.0:
                continue
            buf[m] = v
            m += 1
    return buf[:m]


def abs_diff_median_numba(col):
    return float(np.median(_abs_diffs_numba(np.ascontiguousarray(col, dtype=np.float64), False)))


def nonzero_abs_diff_median_numba(col):
    diffs = _abs_diffs_numba(np.ascontiguousarray(col, dtype=np.float64), True)
    if diffs.size == 0:
        return 0.0
    return float(np.median(diffs))


@_njit
def _pair_row_quad_numba(A, idx_a, idx_b, S):
    n = idx_a.shape[0]
    m = A.shape[1]
    out = np.empty(n)
    d = np.empty(m)
    for p in range(n):
        for k in range(m):
            d[k] = A[idx_a[p], k] - A[idx_b[p], k]
        acc = 0.0
        for k in range(m):
            row = 0.0
            for l in range(m):
                row += S[k, l] * d[l]
            acc += d[k] * row
        out[p] = acc
    return out


def pair_row_quad_numba(A, idx_a, idx_b, S):
    return _pair_row_quad_numba(
        np.ascontiguousarray(A), np.asarray(idx_a, dtype=np.int64),
        np.asarray(idx_b, dtype=np.int64), np.ascontiguousarray(S),
    )


if USE_NUMBA:
    scaled_sqdist = scaled_sqdist_numba
    scaled_sqdist_sym = scaled_sqdist_sym_numba
    abs_diff_median = abs_diff_median_numba
    nonzero_abs_diff_median = nonzero_abs_diff_median_numba
else:
    scaled_sqdist = scaled_sqdist_numpy
    scaled_sqdist_sym = scaled_sqdist_sym_numpy
    abs_diff_median = abs_diff_median_numpy
    nonzero_abs_diff_median = nonzero_abs_diff_median_numpy

# BLAS beats the explicit loop for every M we have measured, so the numpy
# version is used on both paths; the numba variant stays for the benchmark.
pair_row_quad = pair_row_quad_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
