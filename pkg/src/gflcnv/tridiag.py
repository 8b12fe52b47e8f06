"""
Tridiagonal linear systems solved by the Thomas algorithm.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["TridiagonalSystem", "ZeroPivotError", "solve_tridiagonal", "thomas"]


class ZeroPivotError(ArithmeticError):
    """Raised when forward elimination hits a zero (or non-finite) pivot."""


@dataclass
class TridiagonalSystem:
    """Banded storage for ``A x = rhs`` with ``A`` tridiagonal.

    ``sub[k]`` is ``A[k+1, k]`` and ``sup[k]`` is ``A[k, k+1]``.
    """

    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=np.float64)
        self.sub = np.asarray(self.sub, dtype=np.float64)
        self.sup = np.asarray(self.sup, dtype=np.float64)
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        n = self.diag.shape[0]
        if self.diag.ndim != 1 or n < 1:
            raise ValueError("diag must be a non-empty vector")
        if self.sub.shape != (n - 1,) or self.sup.shape != (n - 1,):
            raise ValueError("sub and sup must have length len(diag) - 1")
        if self.rhs.shape != (n,):
            raise ValueError("rhs must have the same length as diag")

    @property
    def n(self):
        return self.diag.shape[0]

    def is_symmetric(self):
        return bool(np.array_equal(self.sub, self.sup))

    def to_dense(self):
        a = np.diag(self.diag)
        if self.n > 1:
            a += np.diag(self.sub, -1) + np.diag(self.sup, 1)
        return a

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = self.diag * x
        out[1:] += self.sub * x[:-1]
        out[:-1] += self.sup * x[1:]
        return out


@njit(cache=True, nogil=True)
def thomas(sub, diag, sup, rhs, out, work):
    """Thomas elimination into ``out``; ``work`` is scratch of length n.

    Returns 0 on success, otherwise 1 + index of the offending pivot.
    """
    n = diag.shape[0]
    piv = diag[0]
    if piv == 0.0 or not np.isfinite(piv):
        return 1
    work[0] = sup[0] / piv if n > 1 else 0.0
    out[0] = rhs[0] / piv
    for k in range(1, n):
        piv = diag[k] - sub[k - 1] * work[k - 1]
        if piv == 0.0 or not np.isfinite(piv):
            return k + 1
        if k < n - 1:
            work[k] = sup[k] / piv
        out[k] = (rhs[k] - sub[k - 1] * out[k - 1]) / piv
    for k in range(n - 2, -1, -1):
        out[k] -= work[k] * out[k + 1]
    return 0


def solve_tridiagonal(system):
    """Solve a tridiagonal system in O(n).

    Parameters
    ----------
    system : TridiagonalSystem

    Returns
    -------
    numpy.ndarray
        Solution vector of length ``system.n``.

    Raises
    ------
    ZeroPivotError
        If elimination meets a zero pivot. Surrogate systems built by the
        solver are positive definite, so this indicates a construction bug.
    """
    n = system.n
    out = np.empty(n)
    work = np.empty(n)
    status = thomas(system.sub, system.diag, system.sup, system.rhs, out, work)
    if status:
        raise ZeroPivotError(f"zero pivot at row {status - 1}")
    return out
