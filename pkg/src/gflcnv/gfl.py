"""
Generalized fused lasso for multiple aligned sequences.

Minimizes, row-separably except for the last term,

    1/2 sum_ij d_ij (y_ij - b_ij)^2 + sum_i l1_i sum_j |b_ij|
      + sum_i l2_i sum_j |b_ij - b_i,j-1|
      + sum_j || l3 * (b_(j) - b_(j-1)) ||_2

where ``d_ij`` is the availability mask and ``b_(j)`` is column ``j``.
Absolute values and the column norm are replaced by ``sqrt(x^2 + eps)``
and the smoothed objective is driven down by majorize-minimize steps:
each step majorizes every smoothed norm by a quadratic at the current
iterate, which decouples the rows into ``M`` symmetric positive definite
tridiagonal systems solved in O(N).

After convergence, jumps and values below ``10 * sqrt(eps)`` are snapped
to exact zeros. On problems small enough for it to pay off, the solve is
first continued at smaller ``eps`` and the means are then refit on the
fusion pattern with the unsmoothed objective, removing smoothing bias.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .signal import SignalMatrix
from .tridiag import TridiagonalSystem, ZeroPivotError, thomas

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-8


class NonFiniteObjectiveError(FloatingPointError):
    pass


@dataclass
class PenaltyConfig:
    """Per-sequence penalties and MM stopping rules.

    ``lambda1``, ``lambda2`` and ``lambda3`` are length-M vectors in the
    units of the data being fitted (normally noise-normalized).
    """

    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = 10_000
    tol_obj: float = 1e-9
    tol_param: float = 1e-6
    polish: bool | str = "auto"
    polish_max_size: int = 200_000
    refine_epsilons: tuple = (1e-10, 1e-12)
    refine_max_iters: int = 2000

    def __post_init__(self):
        lams = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (self.lambda1, self.lambda2, self.lambda3)]
        m = max(v.size for v in lams)
        lams = [np.broadcast_to(v, (m,)).copy() if v.size == 1 else v for v in lams]
        if len({v.size for v in lams}) != 1:
            raise ValueError("lambda vectors must have equal length")
        for v in lams:
            if np.any(~np.isfinite(v)) or np.any(v < 0):
                raise ValueError("penalties must be finite and nonnegative")
        self.lambda1, self.lambda2, self.lambda3 = lams
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if any(not e > 0 for e in self.refine_epsilons):
            raise ValueError("refine_epsilons must be positive")
        # stages at or above epsilon would undo the smoothing schedule
        self.refine_epsilons = tuple(float(e) for e in self.refine_epsilons if e < self.epsilon)
        if not (self.tol_obj > 0 and self.tol_param > 0):
            raise ValueError("tolerances must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        if self.polish not in (True, False, "auto"):
            raise ValueError("polish must be True, False or 'auto'")

    def polish_enabled(self, size):
        """Whether to polish a problem with ``size`` = M * N cells."""
        if self.polish == "auto":
            return size <= self.polish_max_size
        return bool(self.polish)

    @classmethod
    def uniform(cls, m, lambda1=0.0, lambda2=0.0, lambda3=0.0, **kw):
        return cls(np.full(m, float(lambda1)), np.full(m, float(lambda2)), np.full(m, float(lambda3)), **kw)

    @property
    def n_sequences(self):
        return self.lambda1.size

    def for_rows(self, m):
        if self.n_sequences == m:
            return self
        if self.n_sequences == 1:
            return PenaltyConfig(
                np.repeat(self.lambda1, m), np.repeat(self.lambda2, m), np.repeat(self.lambda3, m),
                self.epsilon, self.max_iters, self.tol_obj, self.tol_param, self.polish,
                self.polish_max_size, self.refine_epsilons, self.refine_max_iters,
            )
        raise ValueError(f"penalties given for {self.n_sequences} sequences, data has {m}")


@dataclass
class GflSolution:
    beta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    stationarity_gap: float
    objective: float = math.nan
    smoothed_beta: np.ndarray | None = field(default=None, repr=False)
    polished: bool = False


def smoothed_norm(x, epsilon):
    """``sqrt(||x||^2 + epsilon)``; a scalar ``x`` gives ``sqrt(x^2 + epsilon)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=float)
    return float(math.sqrt(float(np.sum(x * x)) + epsilon))


def _as_arrays(y, mask):
    if isinstance(y, SignalMatrix):
        return y.values, y.mask
    y = np.array(y, dtype=float, ndmin=2)
    if mask is None:
        mask = np.isfinite(y)
    mask = np.array(mask, dtype=bool, ndmin=2)
    if mask.shape != y.shape:
        raise ValueError("mask shape differs from data")
    return np.where(mask, y, 0.0), mask


# ---------------------------------------------------------------------------
# objectives and surrogate

def smoothed_objective(beta, y, cfg, mask=None):
    values, mask = _as_arrays(y, mask)
    beta = np.asarray(beta, dtype=float)
    cfg = cfg.for_rows(beta.shape[0])
    return float(
        _objective_eps(values, mask.astype(np.float64), beta, cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.epsilon)
    )


def gfl_objective(beta, y, cfg, mask=None):
    """Unsmoothed objective value at ``beta``."""
    values, mask = _as_arrays(y, mask)
    beta = np.asarray(beta, dtype=float)
    cfg = cfg.for_rows(beta.shape[0])
    d = np.diff(beta, axis=1)
    fit = 0.5 * np.sum(np.where(mask, values - beta, 0.0) ** 2)
    l1 = np.sum(cfg.lambda1 * np.abs(beta).sum(axis=1))
    l2 = np.sum(cfg.lambda2 * np.abs(d).sum(axis=1))
    l3 = np.sum(np.sqrt(np.sum((cfg.lambda3[:, None] * d) ** 2, axis=0)))
    return float(fit + l1 + l2 + l3)


def surrogate_value(beta, anchor, y, cfg, mask=None):
    """Majorizer of the smoothed objective, tangent at ``anchor``."""
    values, mask = _as_arrays(y, mask)
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(anchor, dtype=float)
    cfg = cfg.for_rows(beta.shape[0])
    eps = cfg.epsilon

    def quad(x2, z2, zn):
        return zn + (x2 - z2) / (2.0 * zn)

    fit = 0.5 * np.sum(np.where(mask, values - beta, 0.0) ** 2)
    zn1 = np.sqrt(z * z + eps)
    t1 = np.sum(cfg.lambda1[:, None] * quad(beta * beta, z * z, zn1))
    db, dz = np.diff(beta, axis=1), np.diff(z, axis=1)
    zn2 = np.sqrt(dz * dz + eps)
    t2 = np.sum(cfg.lambda2[:, None] * quad(db * db, dz * dz, zn2))
    gb = np.sum((cfg.lambda3[:, None] * db) ** 2, axis=0)
    gz = np.sum((cfg.lambda3[:, None] * dz) ** 2, axis=0)
    t3 = np.sum(quad(gb, gz, np.sqrt(gz + eps)))
    return float(fit + t1 + t2 + t3)


def _group_norms(beta, lambda3, eps):
    d = np.diff(beta, axis=1)
    return np.sqrt(np.sum((lambda3[:, None] * d) ** 2, axis=0) + eps)


def build_surrogate(beta_current, y, cfg, row, mask=None):
    """Tridiagonal system whose solution minimizes the row-``row`` surrogate.

    Parameters
    ----------
    beta_current : ndarray, shape (M, N)
        Current iterate (the majorization anchor).
    y : SignalMatrix or ndarray
    cfg : PenaltyConfig
    row : int
    mask : ndarray, optional
        Availability mask when ``y`` is a bare array.
    """
    values, mask = _as_arrays(y, mask)
    beta = np.asarray(beta_current, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta_current must be finite")
    cfg = cfg.for_rows(beta.shape[0])
    eps = cfg.epsilon
    l1, l2, l3 = cfg.lambda1[row], cfg.lambda2[row], cfg.lambda3[row]
    b = beta[row]
    delta = mask[row].astype(float)
    w = l2 / np.sqrt(np.diff(b) ** 2 + eps) + l3 * l3 / _group_norms(beta, cfg.lambda3, eps)
    diag = delta + l1 / np.sqrt(b * b + eps)
    diag[:-1] += w
    diag[1:] += w
    return TridiagonalSystem(diag, -w, -w.copy(), delta * values[row])


def smoothed_gradient(beta, y, cfg, mask=None):
    values, mask = _as_arrays(y, mask)
    beta = np.asarray(beta, dtype=float)
    cfg = cfg.for_rows(beta.shape[0])
    eps = cfg.epsilon
    d = np.diff(beta, axis=1)
    u = cfg.lambda2[:, None] * d / np.sqrt(d * d + eps)
    u += cfg.lambda3[:, None] ** 2 * d / _group_norms(beta, cfg.lambda3, eps)[None, :]
    g = np.where(mask, beta - values, 0.0) + cfg.lambda1[:, None] * beta / np.sqrt(beta * beta + eps)
    g[:, :-1] -= u
    g[:, 1:] += u
    return g


# ---------------------------------------------------------------------------
# compiled MM kernels

@njit(cache=True, nogil=True)
def _objective_eps(y, mask, beta, lam1, lam2, lam3, eps):
    m, n = beta.shape
    total = 0.0
    for i in range(m):
        acc = 0.0
        for j in range(n):
            r = y[i, j] - beta[i, j]
            acc += 0.5 * mask[i, j] * r * r + lam1[i] * math.sqrt(beta[i, j] * beta[i, j] + eps)
        for j in range(n - 1):
            d = beta[i, j + 1] - beta[i, j]
            acc += lam2[i] * math.sqrt(d * d + eps)
        total += acc
    for j in range(n - 1):
        s = 0.0
        for i in range(m):
            d = lam3[i] * (beta[i, j + 1] - beta[i, j])
            s += d * d
        total += math.sqrt(s + eps)
    return total


@njit(cache=True, nogil=True)
def _mm_step(y, mask, beta, lam1, lam2, lam3, eps, out):
    """One MM update of every row; returns 0 or 1 + failing row."""
    m, n = beta.shape
    ginv = np.empty(max(n - 1, 1))
    for j in range(n - 1):
        s = 0.0
        for i in range(m):
            d = lam3[i] * (beta[i, j + 1] - beta[i, j])
            s += d * d
        ginv[j] = 1.0 / math.sqrt(s + eps)
    w = np.empty(max(n - 1, 1))
    diag = np.empty(n)
    rhs = np.empty(n)
    work = np.empty(n)
    for i in range(m):
        l3sq = lam3[i] * lam3[i]
        for j in range(n - 1):
            d = beta[i, j + 1] - beta[i, j]
            w[j] = -(lam2[i] / math.sqrt(d * d + eps) + l3sq * ginv[j])
        for j in range(n):
            b = beta[i, j]
            diag[j] = mask[i, j] + lam1[i] / math.sqrt(b * b + eps)
            rhs[j] = mask[i, j] * y[i, j]
        for j in range(n - 1):
            diag[j] -= w[j]
            diag[j + 1] -= w[j]
        for j in range(n):
            if diag[j] == 0.0:
                # unobserved and unpenalized: the variable is free, keep it
                diag[j] = 1.0
                rhs[j] = beta[i, j]
        if thomas(w, diag, w, rhs, out[i], work) != 0:
            return i + 1
    return 0


def initial_beta(values, mask):
    """Observed values, with masked cells copied from the nearest observed
    neighbour in the row (ties go left)."""
    values = np.asarray(values, float)
    mask = np.asarray(mask, bool)
    m, n = values.shape
    beta = np.where(mask, values, 0.0)
    idx = np.arange(n)
    for i in range(m):
        obs = np.flatnonzero(mask[i])
        if obs.size == 0 or obs.size == n:
            continue
        right = np.searchsorted(obs, idx)
        left = np.clip(right - 1, 0, obs.size - 1)
        right = np.clip(right, 0, obs.size - 1)
        dl = np.abs(idx - obs[left])
        dr = np.abs(obs[right] - idx)
        nearest = np.where(dl <= dr, obs[left], obs[right])
        beta[i] = values[i, nearest]
    return beta


def solve_gfl(y, cfg: PenaltyConfig, mask=None, beta0=None) -> GflSolution:
    """Minimize the generalized fused lasso objective by MM iterations.

    Parameters
    ----------
    y : SignalMatrix or array_like, shape (M, N)
        Observations. Entries with ``mask == 0`` (or NaN for bare arrays)
        are treated as missing and are filled in by the penalties.
    cfg : PenaltyConfig
    mask : array_like of bool, optional
    beta0 : ndarray, optional
        Starting point; defaults to :func:`initial_beta`.

    Returns
    -------
    GflSolution
        ``beta`` is snapped and, when polishing is enabled for this
        problem size, refit without smoothing. ``objective_trace`` holds
        the smoothed objective of the MM iterates, starting with the
        initial point.
    """
    values, mask = _as_arrays(y, mask)
    m, n = values.shape
    cfg = cfg.for_rows(m)
    maskf = mask.astype(np.float64)
    lam1, lam2, lam3 = cfg.lambda1, cfg.lambda2, cfg.lambda3
    eps = float(cfg.epsilon)

    beta = initial_beta(values, mask) if beta0 is None else np.array(beta0, dtype=float)
    beta, trace, it, converged = _run_mm(
        values, maskf, beta, lam1, lam2, lam3, eps, cfg.max_iters, cfg.tol_obj, cfg.tol_param
    )
    if not converged:
        logger.warning("MM stopped at max_iters=%d without meeting the stopping rule", cfg.max_iters)
    gap = float(np.max(np.abs(smoothed_gradient(beta, values, cfg, mask)))) if beta.size else 0.0
    smoothed = beta.copy()

    final_eps = eps
    polish = cfg.polish_enabled(m * n)
    if polish:
        for e in cfg.refine_epsilons:
            beta, _, _, _ = _run_mm(
                values, maskf, beta, lam1, lam2, lam3, e, cfg.refine_max_iters, 1e-13, 1e-10
            )
            final_eps = e
    final, polished = snap_and_refit(beta, values, mask, cfg, final_eps, polish=polish)
    return GflSolution(
        beta=final,
        objective_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        stationarity_gap=gap,
        objective=gfl_objective(final, values, cfg, mask),
        smoothed_beta=smoothed,
        polished=polished,
    )


def _run_mm(values, maskf, beta, lam1, lam2, lam3, eps, max_iters, tol_obj, tol_param):
    f = _objective_eps(values, maskf, beta, lam1, lam2, lam3, eps)
    if not math.isfinite(f):
        raise NonFiniteObjectiveError("objective is not finite at the starting point")
    trace = [f]
    nxt = np.empty_like(beta)
    converged = False
    it = 0
    for it in range(1, int(max_iters) + 1):
        status = _mm_step(values, maskf, beta, lam1, lam2, lam3, eps, nxt)
        if status:
            raise ZeroPivotError(f"surrogate system for row {status - 1} is singular")
        f_new = _objective_eps(values, maskf, nxt, lam1, lam2, lam3, eps)
        if not math.isfinite(f_new):
            raise NonFiniteObjectiveError(f"objective became non-finite at iteration {it}")
        step = float(np.max(np.abs(nxt - beta))) if beta.size else 0.0
        beta, nxt = nxt, beta
        trace.append(f_new)
        if abs(f - f_new) < tol_obj * max(1.0, abs(f)) or step < tol_param:
            converged = True
            break
        f = f_new
    return beta, trace, it, converged


# ---------------------------------------------------------------------------
# snapping and refit on the fusion pattern

def snap_threshold(epsilon):
    return 10.0 * math.sqrt(epsilon)


def _break_mask(beta, cfg, thr):
    """Which jumps survive snapping.

    The group term acts on whole columns: a column of jumps is zero only
    when every row sharing the group penalty jumps by less than ``thr``.
    Inside a nonzero column only a row's own fusion penalty can zero an
    entry, so rows without one keep even tiny jumps.
    """
    d = np.abs(np.diff(beta, axis=1))
    keep = d >= thr
    grp = cfg.lambda3 > 0
    if grp.any() and d.shape[1]:
        col_zero = np.max(d[grp], axis=0) < thr
        own = (cfg.lambda2[grp] > 0)[:, None]
        keep[grp] = ~col_zero & ((d[grp] >= thr) | ~own)
    return keep


def _row_pattern(b, breaks, thr, zero_ok):
    breaks = np.flatnonzero(breaks)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [b.size]))
    lengths = ends - starts
    means = np.add.reduceat(b, starts) / lengths
    fixed = (np.abs(means) < thr) & zero_ok
    means = np.where(fixed, 0.0, means)
    return breaks, starts, lengths, means, fixed


def snap(beta, cfg, epsilon=None):
    """Fuse runs joined by jumps below the snap threshold to their mean and
    zero fused runs whose mean is below it (rows with a lasso penalty only)."""
    thr = snap_threshold(cfg.epsilon if epsilon is None else epsilon)
    keep = _break_mask(beta, cfg, thr)
    out = np.empty_like(beta)
    for i in range(beta.shape[0]):
        _, _, lengths, means, _ = _row_pattern(beta[i], keep[i], thr, cfg.lambda1[i] > 0)
        out[i] = np.repeat(means, lengths)
    return out


def snap_and_refit(beta, values, mask, cfg, epsilon=None, max_iters=2000, polish=True):
    """Snap ``beta`` and, if ``polish``, refit on the fusion pattern.

    Several snap thresholds (decades above ``10 * sqrt(epsilon)``) are tried;
    every candidate is a feasible point, and the one with the lowest
    unsmoothed objective wins.

    Returns
    -------
    (beta, refit_used) : tuple
    """
    epsilon = cfg.epsilon if epsilon is None else epsilon
    snapped = snap(beta, cfg, epsilon)
    if not polish:
        return snapped, False
    best, best_f, used = snapped, gfl_objective(snapped, values, cfg, mask), False
    best_k = _kinks(snapped)
    for k in range(4):
        eps_k = epsilon * 100.0 ** k
        cand = beta
        for _ in range(3):
            # re-snapping a refit merges jumps the refit drove to zero
            try:
                cand = _refit(cand, values, mask, cfg, eps_k, max_iters)
            except (ZeroPivotError, FloatingPointError) as exc:
                logger.debug("refit abandoned: %s", exc)
                cand = None
            if cand is None:
                break
            f, kinks = gfl_objective(cand, values, cfg, mask), _kinks(cand)
            tol = 1e-12 * max(1.0, abs(best_f))
            if f < best_f - tol or (f <= best_f + tol and kinks < best_k):
                best, best_f, best_k, used = cand, f, kinks, True
            if kinks == _kinks(snap(cand, cfg, eps_k)):
                break
    return best, used


def _kinks(beta):
    return int(np.count_nonzero(np.diff(beta, axis=1)) + np.count_nonzero(beta))


def _refit(beta, values, mask, cfg, epsilon, max_iters):
    """Minimize the unsmoothed objective over piecewise-constant rows with
    the break and zero pattern of ``beta`` held fixed.

    Returns None when the pattern is not stable (a kept jump or value
    collapses toward zero or changes sign).
    """
    m, n = beta.shape
    thr = snap_threshold(epsilon)
    collapse = thr * 1e-3
    keep = _break_mask(beta, cfg, thr)
    rows = []
    for i in range(m):
        breaks, starts, lengths, means, fixed = _row_pattern(beta[i], keep[i], thr, cfg.lambda1[i] > 0)
        s = np.add.reduceat(mask[i].astype(float), starts)
        t = np.add.reduceat(np.where(mask[i], values[i], 0.0), starts)
        rows.append([breaks, starts, lengths, means.copy(), fixed, s, t])
    if all(r[0].size == 0 and not r[4].any() and cfg.lambda1[i] == 0 for i, r in enumerate(rows)):
        # no kinks left: each row is one free segment, mean of observed data
        return np.vstack([np.repeat(r[6] / r[5], r[2]) for r in rows])

    sign_jump = [np.sign(np.diff(r[3])) for r in rows]
    sign_mu = [np.sign(r[3]) for r in rows]
    lam3sq = cfg.lambda3 ** 2
    work = np.empty(max(len(r[3]) for r in rows))
    for _ in range(max_iters):
        colsq = np.zeros(max(n - 1, 1))
        jumps = []
        for i, r in enumerate(rows):
            dj = np.diff(r[3])
            jumps.append(dj)
            if cfg.lambda2[i] > 0 and (np.any(np.abs(dj) < collapse) or np.any(np.sign(dj) != sign_jump[i])):
                return None
            free = ~r[4]
            if cfg.lambda1[i] > 0 and (
                np.any(np.abs(r[3][free]) < collapse) or np.any(np.sign(r[3][free]) != sign_mu[i][free])
            ):
                return None
            np.add.at(colsq, r[0], lam3sq[i] * dj * dj)
        gnorm = np.sqrt(colsq)
        if any(np.any(gnorm[r[0]] < collapse * lam3sq[i] ** 0.5) for i, r in enumerate(rows) if lam3sq[i] > 0):
            return None
        change = 0.0
        scale = 1.0
        for i, r in enumerate(rows):
            breaks, _, lengths, mu, fixed, s, t = r
            k = mu.size
            dj = jumps[i]
            w = cfg.lambda2[i] / np.abs(dj) if cfg.lambda2[i] > 0 else np.zeros(k - 1)
            if lam3sq[i] > 0 and k > 1:
                w = w + lam3sq[i] / gnorm[breaks]
            diag = s.copy()
            if cfg.lambda1[i] > 0:
                diag += np.where(fixed, 0.0, cfg.lambda1[i] * lengths / np.where(fixed, 1.0, np.abs(mu)))
            diag[:-1] += w
            diag[1:] += w
            off = -w
            rhs = t.copy()
            if fixed.any():
                diag[fixed] = 1.0
                rhs[fixed] = 0.0
                off = np.where(fixed[:-1] | fixed[1:], 0.0, off)
            new = np.empty(k)
            if thomas(off, diag, off, rhs, new, work[:k]) != 0:
                raise ZeroPivotError("singular refit system")
            change = max(change, float(np.max(np.abs(new - mu))))
            scale = max(scale, float(np.max(np.abs(new))))
            r[3] = new
        if change <= 1e-13 * scale:
            break
    _newton_finish(rows, values, mask, cfg)
    return np.vstack([np.repeat(r[3], r[2]) for r in rows])


def _newton_finish(rows, values, mask, cfg, max_steps=50):
    """Damped Newton steps on the segment means of ``rows`` (in place).

    With the fusion pattern fixed the objective is smooth in the means
    (lasso and fusion terms are linear given their signs), so a few
    Newton steps finish what the MM refit converges to only slowly.
    Steps are accepted only if the unsmoothed objective decreases.
    """
    m = len(rows)
    idx, nv = [], 0
    for r in rows:
        ix = np.full(r[3].size, -1)
        free = ~r[4]
        ix[free] = np.arange(nv, nv + free.sum())
        nv += int(free.sum())
        idx.append(ix)
    if nv == 0:
        return
    grp = [i for i in range(m) if cfg.lambda3[i] > 0]
    cols = np.unique(np.concatenate([rows[i][0] for i in grp])) if grp else np.zeros(0, int)
    lv = np.full((m, cols.size), -1)
    rv = np.full((m, cols.size), -1)
    lam = np.zeros((m, cols.size))
    left = [np.zeros(0, int)] * m
    for i in grp:
        pos = np.searchsorted(cols, rows[i][0])
        k = np.arange(pos.size)
        lv[i, pos], rv[i, pos], lam[i, pos] = idx[i][k], idx[i][k + 1], cfg.lambda3[i]
        left[i] = pos

    def expand(x):
        return [np.where(ix >= 0, x[np.maximum(ix, 0)], 0.0) for ix in idx]

    def beta_of(x):
        return np.vstack([np.repeat(mu, r[2]) for mu, r in zip(expand(x), rows)])

    x = np.concatenate([r[3][~r[4]] for r in rows])
    f = gfl_objective(beta_of(x), values, cfg, mask)
    for _ in range(max_steps):
        mus = expand(x)
        g = np.zeros(nv)
        hr, hc, hv = [], [], []
        u = np.zeros((m, cols.size))
        for i, (r, mu, ix) in enumerate(zip(rows, mus, idx)):
            free = ix >= 0
            _, _, lengths, _, _, s_i, t_i = r
            gi = s_i * mu - t_i + cfg.lambda1[i] * lengths * np.sign(mu)
            sj = cfg.lambda2[i] * np.sign(np.diff(mu))
            gi[1:] += sj
            gi[:-1] -= sj
            g[ix[free]] += gi[free]
            hr.append(ix[free])
            hc.append(ix[free])
            hv.append(s_i[free])
            if cfg.lambda3[i] > 0:
                u[i, left[i]] = cfg.lambda3[i] * np.diff(mu)
        if cols.size:
            gn = np.sqrt(np.sum(u * u, axis=0))
            if np.any(gn == 0):
                return
            coef = lam * u / gn
            for a in range(m):
                ok = rv[a] >= 0
                np.add.at(g, rv[a][ok], coef[a][ok])
                ok = lv[a] >= 0
                np.add.at(g, lv[a][ok], -coef[a][ok])
                for b in range(m):
                    c = lam[a] * lam[b] * ((a == b) / gn - u[a] * u[b] / gn**3)
                    for pa, pb, sign in ((rv[a], rv[b], 1), (lv[a], lv[b], 1), (rv[a], lv[b], -1), (lv[a], rv[b], -1)):
                        ok = (pa >= 0) & (pb >= 0) & (c != 0)
                        hr.append(pa[ok])
                        hc.append(pb[ok])
                        hv.append(sign * c[ok])
        hess = sparse.csc_matrix(
            (np.concatenate(hv), (np.concatenate(hr), np.concatenate(hc))), shape=(nv, nv)
        )
        ridge = 1e-12 * max(1.0, float(np.max(np.abs(hess.diagonal()))))
        with np.errstate(all="ignore"):
            step = spsolve(hess + ridge * sparse.identity(nv, format="csc"), -g)
        if not np.all(np.isfinite(step)) or float(g @ step) >= 0:
            return
        alpha = 1.0
        while alpha > 1e-10:
            x_new = x + alpha * step
            f_new = gfl_objective(beta_of(x_new), values, cfg, mask)
            if f_new < f:
                break
            alpha *= 0.5
        else:
            return
        done = np.max(np.abs(x_new - x)) <= 1e-15 * max(1.0, float(np.max(np.abs(x))))
        x, f = x_new, f_new
        for r, mu in zip(rows, expand(x)):
            r[3] = mu
        if done:
            return
