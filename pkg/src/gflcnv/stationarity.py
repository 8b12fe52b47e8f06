"""
First-order optimality check for generalized fused lasso fits.

A point ``b`` minimizes the objective iff there are subgradients with

    d * (y - b) = l1 * s1 + D^T (l2 * s2 + l3 * e)

where ``D`` takes successive differences along each row, ``s1`` and ``s2``
are signs (anything in [-1, 1] at zeros) and, for each column of jumps,
``e = l3 * d / ||l3 * d||`` when the column is nonzero and ``||e|| <= 1``
otherwise. The free parts of the selection are chosen by projected
least squares (FISTA with restarts), and the largest remaining residual
is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gfl import GflSolution, PenaltyConfig, _as_arrays


@dataclass
class StationarityReport:
    max_violation: float
    per_column_group_norms: np.ndarray
    residual: np.ndarray
    iterations: int


def _dt(v, n):
    """``D^T v`` for row-wise jumps ``v`` of shape (M, N-1)."""
    out = np.zeros((v.shape[0], n))
    out[:, 1:] += v
    out[:, :-1] -= v
    return out


def check_stationarity(
    sol, y, cfg: PenaltyConfig, mask=None, *, zero_tol=0.0, max_iters=20_000, target=1e-10, patience=2000
):
    """Measure how far ``sol`` is from satisfying the subgradient conditions.

    Parameters
    ----------
    sol : GflSolution or array_like
        Fitted means. For a :class:`GflSolution` carrying a smoothed
        iterate, the smoothed derivatives seed the subgradient search.
    y, mask : observations as accepted by :func:`gflcnv.gfl.solve_gfl`.
    cfg : PenaltyConfig
    zero_tol : float
        Values and jumps with magnitude ``<= zero_tol`` count as zero.

    Returns
    -------
    StationarityReport
        ``max_violation`` is the max-norm of the best residual found;
        ``per_column_group_norms`` holds ``||e_j||`` of that selection.
    """
    values, mask = _as_arrays(y, mask)
    m, n = values.shape
    cfg = cfg.for_rows(m)
    if isinstance(sol, GflSolution):
        beta, seed = np.asarray(sol.beta, float), sol.smoothed_beta
    else:
        beta, seed = np.asarray(sol, float), None
    if seed is None:
        seed = beta
    l1 = cfg.lambda1[:, None]
    l2 = cfg.lambda2[:, None]
    l3 = cfg.lambda3[:, None]
    eps = cfg.epsilon

    g = np.where(mask, values - beta, 0.0)
    d = np.diff(beta, axis=1)
    zero_b = np.abs(beta) <= zero_tol
    zero_d = np.abs(d) <= zero_tol
    wd = np.where(zero_d, 0.0, l3 * d)
    col = np.sqrt(np.sum(wd * wd, axis=0))
    free_col = col == 0.0

    # fixed parts of the selection
    s1_fix = np.where(zero_b, 0.0, np.sign(beta))
    s2_fix = np.where(zero_d, 0.0, np.sign(d))
    e_fix = np.divide(wd, col, out=np.zeros_like(wd), where=~free_col)
    free1 = zero_b & (cfg.lambda1[:, None] > 0)
    free2 = zero_d & (cfg.lambda2[:, None] > 0)

    def project(s1, s2, e):
        s1 = np.where(free1, np.clip(s1, -1.0, 1.0), s1_fix)
        s2 = np.where(free2, np.clip(s2, -1.0, 1.0), s2_fix)
        e = np.where(free_col, e, e_fix)
        norms = np.sqrt(np.sum(e * e, axis=0))
        e = e / np.maximum(norms, 1.0)
        return s1, s2, e

    def residual(s1, s2, e):
        return g - l1 * s1 - _dt(l2 * s2 + l3 * e, n)

    # warm start: derivatives of the smoothed norms at the seed
    ds = np.diff(seed, axis=1)
    cs = np.sqrt(np.sum((l3 * ds) ** 2, axis=0) + eps)
    x = project(seed / np.sqrt(seed**2 + eps), ds / np.sqrt(ds**2 + eps), l3 * ds / cs)
    r = residual(*x)
    lip = float(np.max(cfg.lambda1 + 2 * cfg.lambda2 + 2 * cfg.lambda3)) ** 2
    it = 0
    if lip > 0 and n > 0:
        best, best_r = x, r
        best_v = checkpoint = float(np.max(np.abs(r)))
        z, t = x, 1.0
        f_prev = 0.5 * float(np.sum(r * r))
        for it in range(1, max_iters + 1):
            rz = residual(*z)
            gd = rz[:, :-1] - rz[:, 1:]
            cand = project(z[0] + l1 * rz / lip, z[1] - l2 * gd / lip, z[2] - l3 * gd / lip)
            rc = residual(*cand)
            f = 0.5 * float(np.sum(rc * rc))
            v = float(np.max(np.abs(rc)))
            if v < best_v:
                best, best_r, best_v = cand, rc, v
            if best_v <= target:
                break
            if it % patience == 0:  # stop once progress stalls
                if best_v > 0.9 * checkpoint:
                    break
                checkpoint = best_v
            if f > f_prev:  # restart momentum
                z, t = cand, 1.0
            else:
                t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
                z = tuple(c + (t - 1) / t_new * (c - p) for c, p in zip(cand, x))
                t = t_new
            x, f_prev = cand, f
        x, r = best, best_r
    norms = np.sqrt(np.sum(x[2] ** 2, axis=0)) if n > 1 else np.zeros(0)
    return StationarityReport(float(np.max(np.abs(r))) if r.size else 0.0, norms, r, it)
