"""Compiled inner loops for the stacked Lyapunov solve and batched rollouts.

Both kernels run in plain IEEE arithmetic (no fast-math), so results are
reproducible bit-for-bit on a given machine.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _upper_pairs(n):
    N = n * (n + 1) // 2
    iu = np.empty(N, np.int64)
    ju = np.empty(N, np.int64)
    c = 0
    for i in range(n):
        for j in range(i, n):
            iu[c] = i
            ju[c] = j
            c += 1
    return iu, ju


@nb.njit(cache=True)
def lyap_sym(F, Y):
    """Solve ``S = F S F^T + Y`` for each ``(F[s], Y[s])`` of ``(m, n, n)`` stacks.

    The unknowns are the ``n(n+1)/2`` upper-triangular entries of the
    symmetric solution; each reduced system is solved by Gaussian
    elimination with partial pivoting.  No stability check is made.
    """
    m, n, _ = F.shape
    iu, ju = _upper_pairs(n)
    N = iu.shape[0]
    out = np.empty((m, n, n))
    M = np.empty((N, N))
    b = np.empty(N)
    for s in range(m):
        for r in range(N):
            i = iu[r]
            j = ju[r]
            for q in range(N):
                a = iu[q]
                c = ju[q]
                if a == c:
                    v = F[s, i, a] * F[s, j, a]
                else:
                    v = F[s, i, a] * F[s, j, c] + F[s, i, c] * F[s, j, a]
                M[r, q] = -v
            M[r, r] += 1.0
            b[r] = Y[s, i, j]
        for k in range(N):
            p = k
            best = abs(M[k, k])
            for r in range(k + 1, N):
                if abs(M[r, k]) > best:
                    best = abs(M[r, k])
                    p = r
            if p != k:
                for q in range(k, N):
                    t = M[k, q]
                    M[k, q] = M[p, q]
                    M[p, q] = t
                t = b[k]
                b[k] = b[p]
                b[p] = t
            piv = M[k, k]
            for r in range(k + 1, N):
                f = M[r, k] / piv
                if f != 0.0:
                    for q in range(k + 1, N):
                        M[r, q] -= f * M[k, q]
                    b[r] -= f * b[k]
        for k in range(N - 1, -1, -1):
            acc = b[k]
            for q in range(k + 1, N):
                acc -= M[k, q] * b[q]
            b[k] = acc / M[k, k]
        for r in range(N):
            out[s, iu[r], ju[r]] = b[r]
            out[s, ju[r], iu[r]] = b[r]
    return out


@nb.njit(cache=True)
def rollout_costs(F, QK, x0, W, thresh):
    """Average stage cost of ``m`` rollouts ``x+ = F[s] x + W[t, s]``.

    ``inf`` marks rollouts whose final state exceeds ``thresh`` in magnitude
    or whose accumulated cost is not finite.
    """
    ell, m, n = W.shape
    X = x0.copy()
    acc = np.zeros(m)
    y = np.empty(n)
    for t in range(ell):
        for s in range(m):
            c = 0.0
            for i in range(n):
                v = 0.0
                for j in range(n):
                    v += QK[s, i, j] * X[s, j]
                c += X[s, i] * v
            acc[s] += c
            for i in range(n):
                v = W[t, s, i]
                for j in range(n):
                    v += F[s, i, j] * X[s, j]
                y[i] = v
            for i in range(n):
                X[s, i] = y[i]
    out = np.empty(m)
    for s in range(m):
        bad = not np.isfinite(acc[s])
        for i in range(n):
            if not abs(X[s, i]) <= thresh:
                bad = True
        out[s] = np.inf if bad else acc[s] / ell
    return out
