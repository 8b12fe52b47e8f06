"""
Slow reference minimizers for small generalized fused lasso problems.

Nothing here is shared with :mod:`gflcnv.gfl`; the objective is written
out literally and the minimizers use unrelated algorithms, so agreement
with the fast solver is evidence rather than a tautology.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

METHODS = ("conic", "subgradient-descent")


@dataclass
class OracleResult:
    beta: np.ndarray
    objective: float
    method: str
    iterations: int
    stabilized: bool = True


def _inputs(y, mask, lambda1, lambda2, lambda3):
    y = np.array(y, dtype=float, ndmin=2)
    if mask is None:
        mask = np.isfinite(y)
    mask = np.array(mask, dtype=bool, ndmin=2)
    y = np.where(mask, y, 0.0)
    m = y.shape[0]
    lams = [np.broadcast_to(np.asarray(v, float), (m,)).copy() for v in (lambda1, lambda2, lambda3)]
    return y, mask, lams


def _lambdas(cfg):
    return cfg.lambda1, cfg.lambda2, cfg.lambda3


def oracle_objective(beta, y, cfg, mask=None):
    """Unsmoothed objective, evaluated term by term with plain loops."""
    y, mask, (l1, l2, l3) = _inputs(y, mask, *_lambdas(cfg))
    beta = np.array(beta, dtype=float, ndmin=2)
    if beta.shape != y.shape:
        raise ValueError("beta and y shapes differ")
    m, n = y.shape
    total = 0.0
    for i in range(m):
        for j in range(n):
            if mask[i, j]:
                total += 0.5 * (y[i, j] - beta[i, j]) ** 2
            total += l1[i] * abs(beta[i, j])
            if j > 0:
                total += l2[i] * abs(beta[i, j] - beta[i, j - 1])
    for j in range(1, n):
        total += math.sqrt(sum((l3[i] * (beta[i, j] - beta[i, j - 1])) ** 2 for i in range(m)))
    return total


def oracle_minimize(y, cfg, budget=1_000_000, *, mask=None, method="conic") -> OracleResult:
    """Minimize the unsmoothed objective on a small instance.

    Parameters
    ----------
    y : array_like, shape (M, N)
        NaN marks missing entries unless ``mask`` is given.
    cfg : PenaltyConfig (or any object with ``lambda1..3`` vectors)
    budget : int
        Iteration budget of the subgradient method.
    method : {"conic", "subgradient-descent"}
        ``conic`` poses the problem as a second-order cone program
        (cvxpy with Clarabel). ``subgradient-descent`` runs projected
        subgradient steps of size ``a / sqrt(k)`` followed by a
        coordinate-wise polish.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    y, mask, lams = _inputs(y, mask, *_lambdas(cfg))
    if method == "conic":
        beta = _conic(y, mask, *lams)
        return OracleResult(beta, oracle_objective(beta, y, cfg, mask), method, 0)
    beta, iters, stable = _subgradient(y, mask, *lams, int(budget))
    beta = _coordinate_polish(beta, y, mask, cfg)
    return OracleResult(beta, oracle_objective(beta, y, cfg, mask), method, iters, stable)


def _conic(y, mask, l1, l2, l3):
    import cvxpy as cp

    m, n = y.shape
    b = cp.Variable((m, n))
    terms = [0.5 * cp.sum_squares(cp.multiply(mask.astype(float), y - b))]
    if np.any(l1 > 0):
        terms.append(cp.sum(cp.multiply(l1[:, None], cp.abs(b))))
    if n > 1:
        d = b[:, 1:] - b[:, :-1]
        if np.any(l2 > 0):
            terms.append(cp.sum(cp.multiply(l2[:, None], cp.abs(d))))
        if np.any(l3 > 0):
            terms.append(cp.sum(cp.norm(cp.multiply(l3[:, None], d), 2, axis=0)))
    problem = cp.Problem(cp.Minimize(cp.sum(cp.hstack(terms))))
    with warnings.catch_warnings():
        # tolerances this tight often end as "almost solved"; the exact
        # objective is recomputed by the caller anyway
        warnings.simplefilter("ignore", UserWarning)
        problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if b.value is None:
        raise RuntimeError(f"conic solve failed: {problem.status}")
    return np.asarray(b.value)


@njit(cache=True)
def _objective_nb(y, mask, beta, l1, l2, l3):
    m, n = y.shape
    total = 0.0
    for i in range(m):
        for j in range(n):
            if mask[i, j]:
                total += 0.5 * (y[i, j] - beta[i, j]) ** 2
            total += l1[i] * abs(beta[i, j])
            if j > 0:
                total += l2[i] * abs(beta[i, j] - beta[i, j - 1])
    for j in range(1, n):
        s = 0.0
        for i in range(m):
            s += (l3[i] * (beta[i, j] - beta[i, j - 1])) ** 2
        total += math.sqrt(s)
    return total


@njit(cache=True)
def _subgradient_nb(y, mask, l1, l2, l3, budget, beta, best):
    m, n = y.shape
    g = np.zeros((m, n))
    f_best = _objective_nb(y, mask, beta, l1, l2, l3)
    best[:, :] = beta
    scale = 1.0 + np.max(l1) + 2.0 * np.max(l2) + 2.0 * np.max(l3)
    window = max(budget // 10, 1000)
    last_gain = 0
    k = 0
    for k in range(1, budget + 1):
        for i in range(m):
            for j in range(n):
                g[i, j] = (beta[i, j] - y[i, j]) if mask[i, j] else 0.0
                if beta[i, j] > 0:
                    g[i, j] += l1[i]
                elif beta[i, j] < 0:
                    g[i, j] -= l1[i]
        for j in range(1, n):
            s = 0.0
            for i in range(m):
                s += (l3[i] * (beta[i, j] - beta[i, j - 1])) ** 2
            s = math.sqrt(s)
            for i in range(m):
                d = beta[i, j] - beta[i, j - 1]
                v = 0.0
                if d > 0:
                    v = l2[i]
                elif d < 0:
                    v = -l2[i]
                if s > 0:
                    v += l3[i] * l3[i] * d / s
                g[i, j] += v
                g[i, j - 1] -= v
        step = 1.0 / (scale * math.sqrt(k))
        for i in range(m):
            for j in range(n):
                beta[i, j] -= step * g[i, j]
        f = _objective_nb(y, mask, beta, l1, l2, l3)
        if f < f_best - 1e-13 * max(1.0, abs(f_best)):
            f_best = f
            best[:, :] = beta
            last_gain = k
        if k - last_gain > window:
            return k, True
    return k, False


def _subgradient(y, mask, l1, l2, l3, budget):
    beta = np.where(mask, y, 0.0).copy()
    best = np.empty_like(beta)
    iters, stable = _subgradient_nb(y, mask.astype(np.bool_), l1, l2, l3, budget, beta, best)
    return best, int(iters), bool(stable)


def _blocks(beta, tol):
    """Single coordinates, then runs of (nearly) equal values in each row,
    then the same runs taken across all rows."""
    m, n = beta.shape
    out = [[(i, j)] for i in range(m) for j in range(n)]
    for i in range(m):
        cuts = np.flatnonzero(np.abs(np.diff(beta[i])) > tol) + 1
        for run in np.split(np.arange(n), cuts):
            if run.size > 1:
                out.append([(i, j) for j in run])
    if m > 1 and n > 1:
        cuts = np.flatnonzero(np.max(np.abs(np.diff(beta, axis=1)), axis=0) > tol) + 1
        for run in np.split(np.arange(n), cuts):
            out.append([(i, j) for i in range(m) for j in run])
    return out


def _coordinate_polish(beta, y, mask, cfg, sweeps=50, tol=1e-6):
    """Exact 1-D line minimizations over coordinates and fused blocks."""
    beta = beta.copy()
    f = oracle_objective(beta, y, cfg, mask)
    for _ in range(sweeps):
        f_start = f
        for block in _blocks(beta, tol):
            rows, cols = np.array(block).T
            old = beta[rows, cols].copy()

            def along(t):
                beta[rows, cols] = old + t
                return oracle_objective(beta, y, cfg, mask)

            width = 1.0 + float(np.max(np.abs(old)))
            res = minimize_scalar(along, bracket=(-width, width), tol=1e-12)
            if res.fun < f:
                beta[rows, cols] = old + res.x
                f = res.fun
            else:
                beta[rows, cols] = old
        if f_start - f <= 1e-13 * max(1.0, abs(f)):
            break
    return beta
