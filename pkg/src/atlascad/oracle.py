"""Exhaustive active-set oracle for tiny SVM duals (test use only).

Every coordinate is assigned to one of {at zero, at upper bound, free}.
For each assignment the equality-constrained stationarity system over the
free block is solved; consistent, box-feasible solutions are candidate
optima and the best objective wins. Because the duals are convex, some
vertex of the optimal face is the unique stationary point of its own
assignment, so the enumeration is exact. Shares no code with the SMO
solver on purpose.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DegenerateDataError, SizeGuardError
from .svm import Dataset

MAX_N = 10


def _dual_pieces(data, cfg, one_class):
    X = np.asarray(data.points, dtype=np.float64)
    n = X.shape[0]
    K = np.einsum("ik,jk->ij", X, X)
    if one_class:
        y = np.ones(n)
        Q = 2.0 * K
        p = -np.diag(K).copy()
        rhs = 1.0
        ub = 1.0 / (cfg.nu * n)
    else:
        y = np.asarray(data.labels, dtype=np.float64)
        Q = np.outer(y, y) * K
        p = -np.ones(n)
        rhs = 0.0
        ub = float(cfg.C)
    return Q, p, y, rhs, ub


def dual_value(alpha, data, cfg=None, one_class=None):
    """Maximization-form dual objective at ``alpha`` (raw, unstandardized data)."""
    if one_class is None:
        one_class = data.labels is None
    a = np.asarray(alpha, dtype=np.float64)
    if one_class:
        # centered form: exact zero for a single point, never negative
        X = np.asarray(data.points, dtype=np.float64)
        c = a @ X / a.sum()
        return float(a @ np.sum((X - c) ** 2, axis=1))
    Q, p, _, _, _ = _dual_pieces(data, cfg or _Cfg(), one_class)
    return float(-(0.5 * a @ Q @ a + p @ a))


class _Cfg:
    C = 1.0
    nu = 1.0


def _face_candidates(Q, p, y, rhs, ub, upper, frees, fixed_sum, scale, feas_tol):
    """Stationary points for a batch of free sets of equal size.

    Solves, per free set F (with a_U = ub fixed, the rest zero),
        [Q_FF  y_F] [a_F]   [-p_F - Q_FU a_U]
        [y_F^T  0 ] [ b ] = [rhs - y_U^T a_U]
    and keeps consistent, box-feasible solutions.
    """
    n = len(p)
    m, k = frees.shape
    base = np.zeros(n)
    base[upper] = ub
    if k == 0:
        return base[None, :] if abs(fixed_sum - rhs) <= feas_tol else np.empty((0, n))
    A = np.zeros((m, k + 1, k + 1))
    A[:, :k, :k] = Q[frees[:, :, None], frees[:, None, :]]
    A[:, :k, k] = y[frees]
    A[:, k, :k] = y[frees]
    r = np.empty((m, k + 1))
    r[:, :k] = -p[frees] - (Q[:, upper] @ base[upper])[frees]
    r[:, k] = rhs - fixed_sum
    sol = np.einsum("mij,mj->mi", np.linalg.pinv(A), r)
    resid = np.abs(np.einsum("mij,mj->mi", A, sol) - r).max(axis=1)
    a_free = sol[:, :k]
    ok = ((resid <= 1e-8 * scale)
          & np.all(a_free >= -feas_tol, axis=1)
          & np.all(a_free <= ub + feas_tol, axis=1))
    out = np.repeat(base[None, :], int(ok.sum()), axis=0)
    rows = np.arange(out.shape[0])[:, None]
    out[rows, frees[ok]] = np.clip(a_free[ok], 0.0, ub)
    return out


def brute_force_dual_oracle(data, cfg, one_class=None, return_alpha=False):
    """Globally optimal dual objective for ``n <= 10`` by enumeration.

    ``one_class`` defaults to True when ``data`` has no labels.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    n = data.n
    if n > MAX_N:
        raise SizeGuardError(f"oracle handles n <= {MAX_N}, got {n}")
    if one_class is None:
        one_class = data.labels is None
    if not one_class and not (np.any(data.labels > 0) and np.any(data.labels < 0)):
        raise DegenerateDataError("two-class oracle needs both classes")
    Q, p, y, rhs, ub = _dual_pieces(data, cfg, one_class)

    best, best_alpha = -np.inf, None
    scale = max(1.0, float(np.abs(Q).max()))
    feas_tol = 1e-9 * max(1.0, ub)
    for n_upper in range(n + 1):
        for upper in itertools.combinations(range(n), n_upper):
            upper = np.array(upper, dtype=int)
            fixed_sum = ub * y[upper].sum()
            if one_class and fixed_sum > rhs + feas_tol:
                continue
            rest = [k for k in range(n) if k not in set(upper.tolist())]
            for n_free in range(len(rest) + 1):
                combos = list(itertools.combinations(rest, n_free))
                frees = np.array(combos, dtype=int).reshape(len(combos), n_free)
                cands = _face_candidates(Q, p, y, rhs, ub, upper, frees, fixed_sum,
                                         scale, feas_tol)
                if not len(cands):
                    continue
                values = -(0.5 * np.einsum("mi,ij,mj->m", cands, Q, cands) + cands @ p)
                top = int(np.argmax(values))
                if values[top] > best:
                    best, best_alpha = float(values[top]), cands[top]
    if best_alpha is None:
        raise DegenerateDataError("no feasible dual point found")
    if one_class:
        best = dual_value(best_alpha, data, cfg, True)
    return (best, best_alpha) if return_alpha else best
