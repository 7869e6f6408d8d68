"""Crammer-Singer multiclass linear SVM, sequential dual coordinate descent.

Primal:  min_W  1/2 sum_m |w_m|^2 + C sum_i max_m (e_im + w_m.x_i - w_y.x_i)
Dual:    min_a  1/2 sum_m |w_m|^2 + sum_i sum_m e_im a_im
         s.t.   sum_m a_im = 0,  a_im <= C [m == y_i],   w_m = sum_i a_im x_i
with e_im = 0 if m == y_i else 1.  Each step minimizes the dual exactly over
one sample's block a_i, so the dual objective never increases.  A bias is
learned through a constant feature appended to every sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit


@njit(cache=True)
def _solve_block(A, B, Cy, y, K):
    # a_m = min(C_m, (beta - B_m) / A) with beta chosen so that sum_m a_m = 0
    D = np.empty(K)
    for m in range(K):
        D[m] = B[m] + (A * Cy if m == y else 0.0)
    order = np.argsort(D)
    sum_b = 0.0
    for m in range(K):
        sum_b += B[m]
    clamped_c = 0.0
    beta = sum_b / K
    for k in range(K):
        # k smallest breakpoints clamped
        if k > 0:
            m = order[k - 1]
            sum_b -= B[m]
            clamped_c += Cy if m == y else 0.0
        beta = (sum_b - A * clamped_c) / (K - k)
        lo = D[order[k - 1]] if k > 0 else -np.inf
        if lo <= beta and beta < D[order[k]]:
            break
    out = np.empty(K)
    for m in range(K):
        c = Cy if m == y else 0.0
        out[m] = min(c, (beta - B[m]) / A)
    return out


@njit(cache=True)
def _epoch(X, y, alpha, W, C, perm, sq):
    n, d = X.shape
    K = W.shape[0]
    B = np.empty(K)
    for t in range(n):
        i = perm[t]
        A = sq[i]
        if A <= 0.0:
            continue
        for m in range(K):
            s = 0.0
            for f in range(d):
                s += W[m, f] * X[i, f]
            B[m] = s + (0.0 if m == y[i] else 1.0) - A * alpha[i, m]
        new = _solve_block(A, B, C, y[i], K)
        for m in range(K):
            delta = new[m] - alpha[i, m]
            if delta != 0.0:
                for f in range(d):
                    W[m, f] += delta * X[i, f]
                alpha[i, m] = new[m]


def primal_objective(W, X, y, C):
    scores = X @ W.T
    margins = scores + 1.0
    margins[np.arange(len(y)), y] -= 1.0
    xi = margins.max(axis=1) - scores[np.arange(len(y)), y]
    return 0.5 * float(np.sum(W * W)) + C * float(np.sum(xi))


def dual_objective(W, alpha, y):
    e = np.ones_like(alpha)
    e[np.arange(len(y)), y] = 0.0
    return 0.5 * float(np.sum(W * W)) + float(np.sum(e * alpha))


@dataclass
class CSResult:
    W: np.ndarray            # K x (d + 1), last column is the bias
    dual_history: list = field(default_factory=list)
    primal: float = float("nan")
    epochs: int = 0


def crammer_singer(X, y, K, C=1.0, tol=1e-4, max_epochs=2000, seed=0) -> CSResult:
    """Fit on features ``X`` (n x d) and labels ``y`` in [0, K).

    Stops when the duality gap falls below ``tol`` relative to the primal.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    n, d = Xa.shape
    alpha = np.zeros((n, K))
    W = np.zeros((K, d))
    sq = np.einsum("ij,ij->i", Xa, Xa)
    rng = np.random.default_rng(seed)
    res = CSResult(W, [dual_objective(W, alpha, y)])
    for epoch in range(1, max_epochs + 1):
        _epoch(Xa, y, alpha, W, float(C), rng.permutation(n), sq)
        dual = dual_objective(W, alpha, y)
        res.dual_history.append(dual)
        primal = primal_objective(W, Xa, y, C)
        res.epochs = epoch
        if primal + dual <= tol * max(1.0, abs(primal)):
            break
    res.primal = primal_objective(W, Xa, y, C)
    return res
