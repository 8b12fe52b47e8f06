"""
Noise scales and penalty levels.

The noise level of a row is read off its first differences: away from
the (few) change points, ``y[j+1] - y[j]`` is the difference of two
independent errors, so its spread is ``sqrt(2)`` times the noise SD.
Penalties grow like ``sigma * sqrt(log N)``; the fused part is weighted
by ``rho`` and the group part by ``1 - rho`` with an extra ``sqrt(p M)``
for the expected number of sequences sharing a change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gfl import PenaltyConfig
from .signal import SIGMA_FLOOR, NoiseScale, SignalMatrix

MAD_FACTOR = 1.4826
ESTIMATORS = ("SD", "MAD")


class TooFewObservationsError(ValueError):
    pass


@dataclass
class TuningInputs:
    """Multipliers for the penalty rules.

    ``rho`` defaults to ``1 - p``: no sharing (``p = 0``) puts all weight
    on the per-sequence fusion penalty, full sharing on the group one.
    """

    n_loci: int
    n_sequences: int
    c1: float = 0.1
    c2: float = 2.0
    c3: float = 2.0
    p: float = 0.5
    rho: float | None = None

    def __post_init__(self):
        if self.rho is None:
            self.rho = 1.0 - self.p
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("multipliers must be nonnegative")
        if self.n_loci < 2:
            raise ValueError("need at least 2 loci")
        if self.n_sequences < 1:
            raise ValueError("need at least one sequence")


def _differences(row, mask=None):
    row = np.asarray(row, dtype=float)
    if mask is not None:
        row = row[np.asarray(mask, bool)]
    else:
        row = row[np.isfinite(row)]
    if row.size < 3:
        raise TooFewObservationsError(f"need at least 3 observed values, got {row.size}")
    return np.diff(row)


def estimate_sigma(row, estimator="MAD", mask=None):
    """Noise SD of one row from differences of consecutive observed values.

    ``SD`` uses the sample standard deviation of the differences and
    ``MAD`` the scaled median absolute deviation; both divide by sqrt(2).
    Masked (or NaN) entries are skipped. The result is floored at
    ``SIGMA_FLOOR``.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    delta = _differences(row, mask)
    if estimator == "SD":
        spread = float(np.std(delta, ddof=1))
    else:
        spread = MAD_FACTOR * float(np.median(np.abs(delta - np.median(delta))))
    return max(spread / math.sqrt(2.0), SIGMA_FLOOR)


def estimate_scales(signals: SignalMatrix, estimator="MAD") -> NoiseScale:
    """Per-row :func:`estimate_sigma`; rows at the floor are flagged."""
    sig = np.array([estimate_sigma(signals.values[i], estimator, signals.mask[i]) for i in range(signals.n_sequences)])
    return NoiseScale(sig, estimator, sig <= SIGMA_FLOOR)


def compute_lambdas(inputs: TuningInputs, sigmas, **solver_options) -> PenaltyConfig:
    """Penalty vectors scaled to each row's noise level.

    ``lambda1 = c1 s``, ``lambda2 = rho c2 s sqrt(log N)`` and
    ``lambda3 = (1 - rho) c3 s sqrt(p M) sqrt(log N)``.
    """
    s = np.asarray(sigmas.sigmas if isinstance(sigmas, NoiseScale) else sigmas, dtype=float)
    s = np.broadcast_to(np.atleast_1d(s), (inputs.n_sequences,)).astype(float)
    root_log_n = math.sqrt(math.log(inputs.n_loci))
    lam1 = inputs.c1 * s
    lam2 = inputs.rho * inputs.c2 * s * root_log_n
    lam3 = (1.0 - inputs.rho) * inputs.c3 * s * math.sqrt(inputs.p * inputs.n_sequences) * root_log_n
    return PenaltyConfig(lam1, lam2, lam3, **solver_options)


@dataclass
class BiasPrediction:
    bias1: np.ndarray
    bias2: np.ndarray
    bias3: np.ndarray


def predict_bias(lambdas: PenaltyConfig, segment_length, sharers=1) -> BiasPrediction:
    """Rough shrinkage of a segment mean caused by each penalty.

    The lasso term shifts every mean by about ``lambda1``, the fusion term
    shifts a segment of length ``L`` by about ``lambda2 / L`` and the group
    term by about ``lambda3 / (L sqrt(m))`` when ``m`` sequences share it.
    """
    if segment_length < 1:
        raise ValueError("segment_length must be >= 1")
    if sharers < 1:
        raise ValueError("sharers must be >= 1")
    L = float(segment_length)
    return BiasPrediction(
        np.array(lambdas.lambda1, float),
        np.asarray(lambdas.lambda2, float) / L,
        np.asarray(lambdas.lambda3, float) / (L * math.sqrt(sharers)),
    )
