"""Hot numeric kernels: simplex-constrained least squares and the
Zivot-Andrews candidate regressions.

Each kernel is plain numpy code that numba can also compile. Set the
environment variable ``SYNTHBREAK_NO_NUMBA=1`` (before import) to run the
pure-numpy path; numba is also skipped silently when it is not installed.
"""
import os

import numpy as np

_DISABLED = os.environ.get("SYNTHBREAK_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def kernel(fn):
    if HAS_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# status codes returned by simplex_lsq
CONVERGED = 0
MAX_ITER = 1

# components at or below this are treated as leaving the support
_ZERO = 1e-14
_RCOND = 1e-12


@kernel
def _support_solve(A, b, idx):
    """Minimise ||A[:, idx] u - b|| subject to sum(u) = 1 (u unrestricted)."""
    p = idx.shape[0]
    z = np.zeros(p)
    if p == 1:
        z[0] = 1.0
        return z
    K = A.shape[0]
    last = idx[p - 1]
    M = np.empty((K, p - 1))
    for c in range(p - 1):
        M[:, c] = A[:, idx[c]] - A[:, last]
    rhs = b - A[:, last]
    sol = np.linalg.lstsq(M, rhs, _RCOND)[0]
    z[: p - 1] = sol
    z[p - 1] = 1.0 - sol.sum()
    return z


@kernel
def simplex_lsq(A, b, tol, max_iter):
    """Active-set solver for min ||A w - b||^2 over the unit simplex.

    Lawson-Hanson style: grow the support with the coordinate of most
    negative reduced gradient, solve the equality-constrained subproblem on
    the support, and step back toward feasibility when a component goes
    nonpositive. When the subproblem is rank deficient and rejects the
    entering coordinate, an exact line search toward that vertex keeps the
    objective strictly decreasing.

    Returns (w, iterations, status).
    """
    K, J = A.shape
    w = np.zeros(J)
    # start at the best vertex; strict < keeps the lowest index on ties
    best = 0
    best_val = np.inf
    for j in range(J):
        r = A[:, j] - b
        val = r @ r
        if val < best_val:
            best_val = val
            best = j
    w[best] = 1.0
    support = np.zeros(J, dtype=np.bool_)
    support[best] = True
    if J == 1:
        return w, 0, CONVERGED

    it = 0
    while it < max_iter:
        it += 1
        r = A @ w - b
        g = A.T @ r
        nu = g @ w
        thresh = tol * (1.0 + np.max(np.abs(g)))
        enter = -1
        most = -thresh
        for j in range(J):
            if not support[j]:
                d = g[j] - nu
                if d < most:
                    most = d
                    enter = j
        if enter < 0:
            return w, it, CONVERGED
        support[enter] = True

        first = True
        while True:
            idx = np.nonzero(support)[0]
            z = _support_solve(A, b, idx)
            ok = True
            for k in range(idx.shape[0]):
                if z[k] <= _ZERO:
                    ok = False
                    break
            if ok:
                w[:] = 0.0
                for k in range(idx.shape[0]):
                    w[idx[k]] = z[k]
                break
            if first:
                ke = -1
                for k in range(idx.shape[0]):
                    if idx[k] == enter:
                        ke = k
                if ke >= 0 and z[ke] <= _ZERO:
                    # degenerate subproblem: move toward the entering vertex
                    d = -w.copy()
                    d[enter] += 1.0
                    Ad = A @ d
                    den = Ad @ Ad
                    step = 1.0
                    if den > 0.0:
                        step = min(1.0, max(0.0, -(r @ Ad) / den))
                    w += step * d
                    if step <= 0.0:
                        support[enter] = False
                        w[enter] = 0.0
            first = False
            alpha = 1.0
            for k in range(idx.shape[0]):
                j = idx[k]
                if z[k] <= _ZERO and w[j] - z[k] > 0.0:
                    a = w[j] / (w[j] - z[k])
                    if a < alpha:
                        alpha = a
            for k in range(idx.shape[0]):
                j = idx[k]
                w[j] += alpha * (z[k] - w[j])
            for k in range(idx.shape[0]):
                j = idx[k]
                if w[j] <= _ZERO:
                    w[j] = 0.0
                    support[j] = False
            if not support.any():
                # cannot happen in exact arithmetic; recover at the entering vertex
                w[:] = 0.0
                w[enter] = 1.0
                support[enter] = True
            it += 1
            if it >= max_iter:
                return w, it, MAX_ITER
    return w, it, MAX_ITER


@kernel
def _ols_tstat(X, y, col):
    """OLS t-statistic of coefficient ``col`` and the residual sum of squares."""
    m, q = X.shape
    Q, R = np.linalg.qr(X)
    beta = np.linalg.solve(R, np.ascontiguousarray(Q.T) @ y)
    resid = y - X @ beta
    rss = resid @ resid
    Rinv = np.linalg.inv(R)
    var = rss / (m - q) * np.sum(Rinv[col, :] ** 2)
    if var <= 0.0:
        return -np.inf, rss
    return beta[col] / np.sqrt(var), rss


@kernel
def za_design(y, lags, model, brk, start):
    """Design matrix and response for one Zivot-Andrews candidate.

    model: 0 intercept shift, 1 trend shift, 2 both. ``brk`` is the index of
    the first observation of the new regime. Rows cover t = start .. n-1.
    Column 3 + (model == 2) holds y[t-1]; its coefficient is the unit-root
    statistic. Returns (X, dy, col).
    """
    n = y.shape[0]
    m = n - start
    nd = 2 if model == 2 else 1
    q = 3 + nd + lags
    X = np.zeros((m, q))
    dy = np.empty(m)
    for i in range(m):
        t = start + i
        dy[i] = y[t] - y[t - 1]
        X[i, 0] = 1.0
        X[i, 1] = t / n
        c = 2
        if model == 0 or model == 2:
            X[i, c] = 1.0 if t >= brk else 0.0
            c += 1
        if model == 1 or model == 2:
            X[i, c] = (t - brk + 1) / n if t >= brk else 0.0
            c += 1
        X[i, c] = y[t - 1]
        for j in range(1, lags + 1):
            X[i, c + j] = y[t - j] - y[t - j - 1]
    return X, dy, 2 + nd


@kernel
def za_tstats(y, lags, model, candidates, start):
    out = np.empty(candidates.shape[0])
    for k in range(candidates.shape[0]):
        X, dy, col = za_design(y, lags, model, candidates[k], start)
        out[k] = _ols_tstat(X, dy, col)[0]
    return out


@kernel
def za_rss(y, lags, model, brk, start):
    X, dy, col = za_design(y, lags, model, brk, start)
    return _ols_tstat(X, dy, col)[1], X.shape[0], X.shape[1]
