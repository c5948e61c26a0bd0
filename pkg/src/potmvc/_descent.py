"""Slow projected-descent kernels backing the reference transport solver.

These kernels deliberately avoid any matrix-scaling recursion: they descend
on the plan entries directly (soft-sign normalized gradient steps with a
1/(1+decay*t) schedule, tail-iterate averaging) and enforce feasibility with
Euclidean simplex projections. They exist to cross-check the fast solvers
and are far too slow for production use.
"""

import math

import numpy as np
from numba import njit, prange

_TINY = 1e-300
# Entries this far (relatively) below the row mass are treated as parked at
# the floor when evaluating log gradients, so their unbounded entropic slope
# cannot poison the step normalization.
_LOG_FLOOR_REL = 1e-9


@njit(cache=True)
def _project_simplex(x, out, target):
    """Euclidean projection of x onto {z >= 0, sum z = target}, into out."""
    n = x.shape[0]
    if target <= 0.0:
        for i in range(n):
            out[i] = 0.0
        return
    srt = np.empty(n)
    for i in range(n):
        srt[i] = x[i]
    for a in range(1, n):
        key = srt[a]
        b = a - 1
        while b >= 0 and srt[b] < key:
            srt[b + 1] = srt[b]
            b -= 1
        srt[b + 1] = key
    css = 0.0
    tau = 0.0
    for k in range(n):
        css += srt[k]
        tk = (css - target) / (k + 1)
        if srt[k] - tk > 0.0:
            tau = tk
    for i in range(n):
        v = x[i] - tau
        out[i] = v if v > 0.0 else 0.0


@njit(cache=True)
def _project_rows(T, cols, target):
    n = T.shape[0]
    x = np.empty(cols)
    buf = np.empty(cols)
    for i in range(n):
        for j in range(cols):
            x[j] = T[i, j]
        _project_simplex(x, buf, target)
        for j in range(cols):
            T[i, j] = buf[j]


@njit(cache=True)
def _project_col(T, j, target):
    n = T.shape[0]
    col = np.empty(n)
    out = np.empty(n)
    for i in range(n):
        col[i] = T[i, j]
    _project_simplex(col, out, target)
    for i in range(n):
        T[i, j] = out[i]


@njit(cache=True)
def pgd_partial(log_kernel, row_mass, col_target, beta_pad, epsilon,
                iters, step0, decay, polish, avg_frac):
    """Minimize eps*KL(T||M) + sum_j beta_j*genKL(col_j, c*_j) over extended
    plans with fixed row sums and the virtual (last) column's marginal pinned
    to c*[-1].

    log_kernel is log M = -C/epsilon for the extended cost. beta_pad carries
    0.0 in the virtual slot: that column is enforced by exact projection, not
    a KL penalty. When c*[-1] == 0 (full mass) the virtual column is dropped
    from the optimization entirely.
    """
    n, m = log_kernel.shape
    virtual_on = col_target[m - 1] > 0.0
    cols = m if virtual_on else m - 1
    log_cstar = np.empty(m)
    for j in range(m):
        log_cstar[j] = math.log(col_target[j] + _TINY)
    T = np.zeros((n, m))
    for i in range(n):
        for j in range(cols):
            T[i, j] = row_mass * col_target[j]
    acc = np.zeros((n, m))
    n_acc = 0
    start_avg = int(iters * (1.0 - avg_frac))
    colkl = np.empty(m)
    grad = np.empty((n, m))
    floor = row_mass * _LOG_FLOOR_REL
    for t in range(iters):
        for j in range(cols):
            if beta_pad[j] > 0.0:
                s = 0.0
                for i in range(n):
                    s += T[i, j]
                colkl[j] = beta_pad[j] * (math.log(s + _TINY) - log_cstar[j])
            else:
                colkl[j] = 0.0
        gmax = _TINY
        for i in range(n):
            for j in range(cols):
                tij = T[i, j]
                g = epsilon * (math.log(tij if tij > floor else floor)
                               - log_kernel[i, j])
                g += colkl[j]
                grad[i, j] = g
                a = abs(g)
                if a > gmax:
                    gmax = a
        step = row_mass * step0 / ((1.0 + decay * t) * gmax)
        for i in range(n):
            for j in range(cols):
                T[i, j] -= step * grad[i, j]
        _project_rows(T, cols, row_mass)
        if virtual_on:
            _project_col(T, m - 1, col_target[m - 1])
        if t >= start_avg:
            for i in range(n):
                for j in range(cols):
                    acc[i, j] += T[i, j]
            n_acc += 1
    if n_acc > 0:
        for i in range(n):
            for j in range(cols):
                T[i, j] = acc[i, j] / n_acc
    for _ in range(polish):
        if virtual_on:
            _project_col(T, m - 1, col_target[m - 1])
        _project_rows(T, cols, row_mass)
    return T


@njit(cache=True, parallel=True)
def pgd_partial_batch(log_kernels, row_mass, col_target, beta_pad, epsilon,
                      iters, step0, decay, polish, avg_frac):
    nb = log_kernels.shape[0]
    out = np.empty_like(log_kernels)
    for b in prange(nb):
        out[b] = pgd_partial(log_kernels[b], row_mass, col_target, beta_pad,
                             epsilon, iters, step0, decay, polish, avg_frac)
    return out


@njit(cache=True)
def pgd_balanced(log_kernel, r, c, epsilon, iters, step0, decay, polish,
                 avg_frac):
    """Minimize <T,C> + eps*sum T log T over the transport polytope U(r,c)."""
    n, m = log_kernel.shape
    mass = 0.0
    for i in range(n):
        mass += r[i]
    T = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            T[i, j] = r[i] * c[j] / mass
    acc = np.zeros((n, m))
    n_acc = 0
    start_avg = int(iters * (1.0 - avg_frac))
    scale = 0.0
    for i in range(n):
        if r[i] > scale:
            scale = r[i]
    grad = np.empty((n, m))
    floor = scale * _LOG_FLOOR_REL
    for t in range(iters):
        gmax = _TINY
        for i in range(n):
            for j in range(m):
                tij = T[i, j]
                g = epsilon * (math.log(tij if tij > floor else floor)
                               - log_kernel[i, j])
                grad[i, j] = g
                a = abs(g)
                if a > gmax:
                    gmax = a
        step = scale * step0 / ((1.0 + decay * t) * gmax)
        for i in range(n):
            for j in range(m):
                T[i, j] -= step * grad[i, j]
        _balanced_feasify(T, r, c)
        if t >= start_avg:
            for i in range(n):
                for j in range(m):
                    acc[i, j] += T[i, j]
            n_acc += 1
    if n_acc > 0:
        for i in range(n):
            for j in range(m):
                T[i, j] = acc[i, j] / n_acc
    for _ in range(polish):
        _balanced_feasify(T, r, c)
    return T


@njit(cache=True)
def _balanced_feasify(T, r, c):
    n, m = T.shape
    x = np.empty(m)
    buf = np.empty(m)
    for i in range(n):
        for j in range(m):
            x[j] = T[i, j]
        _project_simplex(x, buf, r[i])
        for j in range(m):
            T[i, j] = buf[j]
    colv = np.empty(n)
    colo = np.empty(n)
    for j in range(m):
        for i in range(n):
            colv[i] = T[i, j]
        _project_simplex(colv, colo, c[j])
        for i in range(n):
            T[i, j] = colo[i]


@njit(cache=True)
def pgd_unbalanced(log_kernel, r, c, epsilon, gamma1, gamma2,
                   iters, step0, decay, avg_frac):
    """Minimize eps*genKL(T||M) + g1*genKL(T1||r) + g2*genKL(T'1||c) over
    nonnegative T (no hard marginals)."""
    n, m = log_kernel.shape
    mass = 0.0
    for i in range(n):
        mass += r[i]
    T = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            T[i, j] = r[i] * c[j] / mass
    acc = np.zeros((n, m))
    n_acc = 0
    start_avg = int(iters * (1.0 - avg_frac))
    rowpen = np.empty(n)
    colpen = np.empty(m)
    scale = 0.0
    for i in range(n):
        if r[i] > scale:
            scale = r[i]
    grad = np.empty((n, m))
    floor = scale * _LOG_FLOOR_REL
    for t in range(iters):
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += T[i, j]
            rowpen[i] = gamma1 * (math.log(s + _TINY)
                                  - math.log(r[i] + _TINY))
        for j in range(m):
            s = 0.0
            for i in range(n):
                s += T[i, j]
            colpen[j] = gamma2 * (math.log(s + _TINY)
                                  - math.log(c[j] + _TINY))
        gmax = _TINY
        for i in range(n):
            for j in range(m):
                tij = T[i, j]
                g = epsilon * (math.log(tij if tij > floor else floor)
                               - log_kernel[i, j])
                g += rowpen[i] + colpen[j]
                grad[i, j] = g
                a = abs(g)
                if a > gmax:
                    gmax = a
        step = scale * step0 / ((1.0 + decay * t) * gmax)
        for i in range(n):
            for j in range(m):
                v = T[i, j] - step * grad[i, j]
                T[i, j] = v if v > 0.0 else 0.0
        if t >= start_avg:
            for i in range(n):
                for j in range(m):
                    acc[i, j] += T[i, j]
            n_acc += 1
    if n_acc > 0:
        for i in range(n):
            for j in range(m):
                T[i, j] = acc[i, j] / n_acc
    return T
