"""Hot inner loops, JIT-compiled with numba by default.

Set SENDWISE_NO_NUMBA=1 to run the identical function bodies as plain
Python/numpy. Each kernel is self-contained (no calls into other kernels),
sticks to the numba-supported numpy subset, and does the same float ops in
the same order either way, so jitted and interpreted paths produce
bit-identical results. Both variants stay importable (``*_py`` and
``*_jit``) for the benchmark in benchmarks/kernel_bench.py; the public
names point at the selected one.
"""

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("SENDWISE_NO_NUMBA", "").lower() in ("1", "true", "yes")


def _pace_day(times, p, prefix, norm, q, slot_seconds, uniforms):
    """Replay one day of triggers through the send/hold rule.

    times: sorted trigger timestamps (seconds since day start).
    prefix: cumulative CTR sums, prefix[s] = sum of p[:s], length K+1.
    uniforms: one pre-drawn U[0,1) variate per trigger.

    Returns (flags, pvals): flags[i] = 1 if trigger i sent, pvals[i] the
    expected-send curve value at that trigger.
    """
    n_slots = p.shape[0]
    n = times.shape[0]
    flags = np.zeros(n, dtype=np.uint8)
    pvals = np.empty(n, dtype=np.float64)
    h = 0.0
    for i in range(n):
        t = times[i]
        s = int(t // slot_seconds)
        if s > n_slots - 1:
            s = n_slots - 1
        frac = (t - s * slot_seconds) / slot_seconds
        pt = (prefix[s] + frac * p[s]) / norm * q
        pvals[i] = pt
        prob = pt - h
        if prob > 1.0:
            prob = 1.0
        if prob > 0.0 and uniforms[i] < prob:
            flags[i] = 1
            h += 1.0
    return flags, pvals


def _project_simplex(y, total):
    """Euclidean projection onto {x >= 0, sum(x) = total}, sort-based and exact."""
    n = y.shape[0]
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    tau = 0.0
    for j in range(n):
        cand = (css[j] - total) / (j + 1.0)
        if u[j] > cand:
            tau = cand
    out = y - tau
    for i in range(n):
        if out[i] < 0.0:
            out[i] = 0.0
    return out


def _pgd_qp(p, q, lam, step, tol, max_iter):
    """Projected gradient descent on -p.n + lam*|n|_2^2 over the quota simplex.

    Projection is inlined so the kernel is self-contained. Returns the
    iterate with the lowest objective seen plus the iteration count.
    """
    size = p.shape[0]
    n = np.empty(size, dtype=np.float64)
    y = p / (2.0 * lam)
    # projection of the unconstrained minimizer as the starting point
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    tau = 0.0
    for j in range(size):
        cand = (css[j] - q) / (j + 1.0)
        if u[j] > cand:
            tau = cand
    for i in range(size):
        v = y[i] - tau
        n[i] = v if v > 0.0 else 0.0

    best = n.copy()
    best_obj = -np.dot(p, n) + lam * np.dot(n, n)
    it = 0
    for it in range(1, max_iter + 1):
        y = n - step * (2.0 * lam * n - p)
        u = np.sort(y)[::-1]
        css = np.cumsum(u)
        tau = 0.0
        for j in range(size):
            cand = (css[j] - q) / (j + 1.0)
            if u[j] > cand:
                tau = cand
        delta = 0.0
        for i in range(size):
            v = y[i] - tau
            if v < 0.0:
                v = 0.0
            d = abs(v - n[i])
            if d > delta:
                delta = d
            n[i] = v
        obj = -np.dot(p, n) + lam * np.dot(n, n)
        if obj < best_obj:
            best_obj = obj
            best = n.copy()
        if delta <= tol:
            break
    return best, it


def _waterfill_phi(p, q, lam, iters):
    """Bisection for the dual threshold phi with sum(max(0, p-phi))/(2 lam) = q."""
    lo = p.min() - 2.0 * lam * q
    hi = p.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = 0.0
        for i in range(p.shape[0]):
            r = p[i] - mid
            if r > 0.0:
                s += r
        if s / (2.0 * lam) >= q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


pace_day_py = _pace_day
project_simplex_py = _project_simplex
pgd_qp_py = _pgd_qp
waterfill_phi_py = _waterfill_phi

if NUMBA_DISABLED:
    pace_day_jit = None
    project_simplex_jit = None
    pgd_qp_jit = None
    waterfill_phi_jit = None
    pace_day = pace_day_py
    project_simplex = project_simplex_py
    pgd_qp = pgd_qp_py
    waterfill_phi = waterfill_phi_py
else:
    from numba import njit

    pace_day_jit = njit(cache=True)(_pace_day)
    project_simplex_jit = njit(cache=True)(_project_simplex)
    pgd_qp_jit = njit(cache=True)(_pgd_qp)
    waterfill_phi_jit = njit(cache=True)(_waterfill_phi)
    pace_day = pace_day_jit
    project_simplex = project_simplex_jit
    pgd_qp = pgd_qp_jit
    waterfill_phi = waterfill_phi_jit


def warmup():
    """Trigger JIT compilation on tiny inputs (no-op without numba)."""
    t = np.array([0.5])
    p = np.array([0.5, 0.5])
    pre = np.array([0.0, 0.5, 1.0])
    pace_day(t, p, pre, 1.0, 1.0, 1.0, np.array([0.5]))
    pgd_qp(p, 1.0, 0.5, 0.9, 1e-10, 50)
    waterfill_phi(p, 1.0, 0.5, 50)
    project_simplex(p, 1.0)
