"""Hot numeric kernels with optional numba acceleration.

Every kernel is written once in a numba-compatible numpy subset.  At import
time the backend is chosen from the ``CROSSFIT_BACKEND`` environment variable:

* ``auto`` (default) - JIT-compile with numba when it is importable,
  otherwise fall back to the plain numpy implementations;
* ``numba`` - require numba, raise if missing;
* ``numpy`` - force the pure-numpy path (useful for debugging and as the
  reference side of ``benchmarks/bench_kernels.py``).

The ``*_numpy`` names are always the uncompiled functions so the two paths
can be compared directly.
"""

import os

import numpy as np

__all__ = [
    "BACKEND",
    "cluster_stats",
    "pair_sums",
    "pattern_pair_sum",
    "bspline_rows",
    "cluster_stats_numpy",
    "pair_sums_numpy",
    "pattern_pair_sum_numpy",
    "bspline_rows_numpy",
]

_ENV_VAR = "CROSSFIT_BACKEND"


def _cluster_stats(resid, dmu, inv_sd, X, starts, counts, rinv_stack, rinv_idx):
    """Accumulate GEE per-cluster score, bread and meat contributions.

    Parameters
    ----------
    resid : (N,) raw residuals y - mu
    dmu : (N,) derivative of the mean wrt the linear predictor
    inv_sd : (N,) 1/sqrt(V(mu)) including any prior-weight scaling
    X : (N, p) design matrix
    starts, counts : (n_clusters,) row offsets and sizes per cluster
    rinv_stack : (k, L, L) inverted working correlations, one per distinct
        cluster size, zero padded to the maximum size L
    rinv_idx : (n_clusters,) index into ``rinv_stack`` per cluster

    Returns
    -------
    score : (p,) sum of D_i' V_i^-1 (y_i - mu_i) at unit dispersion
    bread : (p, p) sum of D_i' V_i^-1 D_i
    meat : (p, p) sum of (D_i' V_i^-1 r_i)(D_i' V_i^-1 r_i)'
    """
    p = X.shape[1]
    score = np.zeros(p)
    bread = np.zeros((p, p))
    meat = np.zeros((p, p))
    for c in range(starts.shape[0]):
        s = starts[c]
        n = counts[c]
        A = X[s:s + n] * dmu[s:s + n].reshape(n, 1)
        w = inv_sd[s:s + n]
        B = rinv_stack[rinv_idx[c], :n, :n] * w.reshape(n, 1) * w.reshape(1, n)
        G = A.T @ B
        g = G @ resid[s:s + n]
        score += g
        bread += G @ A
        meat += g.reshape(p, 1) * g.reshape(1, p)
    return score, bread, meat


def _pair_sums(e, starts, counts, adjacent):
    """Sum of within-cluster residual products and the pair count.

    ``adjacent`` selects lag-1 pairs only (AR1 moments); otherwise all
    unordered pairs are used (exchangeable moments).
    """
    total = 0.0
    npairs = 0
    for c in range(starts.shape[0]):
        s = starts[c]
        n = counts[c]
        if n < 2:
            continue
        if adjacent:
            for k in range(n - 1):
                total += e[s + k] * e[s + k + 1]
            npairs += n - 1
        else:
            tot = 0.0
            sq = 0.0
            for k in range(n):
                tot += e[s + k]
                sq += e[s + k] * e[s + k]
            total += 0.5 * (tot * tot - sq)
            npairs += n * (n - 1) // 2
    return total, npairs


def _pattern_pair_sum(e, starts, counts, pattern):
    """Sum over clusters of sum_{k<l} e_k e_l pattern[k, l].

    Clusters must all have the pattern's dimension (balanced designs only).
    """
    total = 0.0
    for c in range(starts.shape[0]):
        s = starts[c]
        n = counts[c]
        for k in range(n - 1):
            for l in range(k + 1, n):
                total += e[s + k] * e[s + l] * pattern[k, l]
    return total


def _bspline_rows(x, knots, degree):
    """Evaluate all B-spline basis functions at each point of ``x``.

    ``knots`` is the full clamped knot vector.  Points outside the boundary
    knots get an all-zero row.  Uses the iterative Cox-de Boor triangle.
    """
    m = x.shape[0]
    nb = knots.shape[0] - degree - 1
    out = np.zeros((m, nb))
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    vals = np.empty(degree + 1)
    lo_knot = knots[degree]
    hi_knot = knots[nb]
    for idx in range(m):
        xx = x[idx]
        if xx < lo_knot or xx > hi_knot:
            continue
        if xx >= hi_knot:
            span = nb - 1
        elif xx <= lo_knot:
            span = degree
        else:
            lo = degree
            hi = nb
            span = (lo + hi) // 2
            while xx < knots[span] or xx >= knots[span + 1]:
                if xx < knots[span]:
                    hi = span
                else:
                    lo = span
                span = (lo + hi) // 2
        vals[0] = 1.0
        for d in range(1, degree + 1):
            left[d] = xx - knots[span + 1 - d]
            right[d] = knots[span + d] - xx
            saved = 0.0
            for r in range(d):
                tmp = vals[r] / (right[r + 1] + left[d - r])
                vals[r] = saved + right[r + 1] * tmp
                saved = left[d - r] * tmp
            vals[d] = saved
        for j in range(degree + 1):
            out[idx, span - degree + j] = vals[j]
    return out


def _resolve_backend():
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_ENV_VAR} must be one of auto/numba/numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy", None
    try:
        from numba import njit
    except ImportError:
        if choice == "numba":
            raise
        return "numpy", None
    return "numba", njit


BACKEND, _njit = _resolve_backend()

cluster_stats_numpy = _cluster_stats
pair_sums_numpy = _pair_sums
pattern_pair_sum_numpy = _pattern_pair_sum
bspline_rows_numpy = _bspline_rows

if BACKEND == "numba":
    _jit = _njit(cache=True)
    cluster_stats = _jit(_cluster_stats)
    pair_sums = _jit(_pair_sums)
    pattern_pair_sum = _jit(_pattern_pair_sum)
    bspline_rows = _jit(_bspline_rows)
else:
    cluster_stats = _cluster_stats
    pair_sums = _pair_sums
    pattern_pair_sum = _pattern_pair_sum
    bspline_rows = _bspline_rows


def warmup():
    """Trigger JIT compilation (or cache load) of every kernel."""
    X = np.ones((2, 1))
    starts = np.zeros(1, dtype=np.int64)
    counts = np.full(1, 2, dtype=np.int64)
    rinv = np.eye(2).reshape(1, 2, 2)
    ridx = np.zeros(1, dtype=np.int64)
    one = np.ones(2)
    cluster_stats(one, one, one, X, starts, counts, rinv, ridx)
    pair_sums(one, starts, counts, True)
    pair_sums(one, starts, counts, False)
    pattern_pair_sum(one, starts, counts, np.eye(2))
    bspline_rows(np.array([0.5]), np.array([0.0, 0, 0, 0, 1, 1, 1, 1]), 3)
