"""
Copy-number calls for segments from LRR and BAF.

For a segment ``R`` and state ``c`` the score is

    LR(c) = log L_BAF(x_R; c) / L_BAF(x_R; 2) + log L_LRR(y_R; c) / L_LRR(y_R; 2)

BAF at copy number ``c`` is a mixture over the ``c + 1`` genotypes with
binomial weights in the allele frequencies; homozygous clusters sit on
the boundaries (half-normal), the others at ``s / c``, and a deleted
region (``c = 0``) gives a flat normal at 1/2. LRR is normal: with the
segment's own mean and SD for ``c != 2`` and with a chromosome-wide
baseline for ``c = 2``.

The best state is reported only if its LR exceeds ``r1`` and the segment
LRR mean is further than ``r2 * sigma2`` from zero; otherwise the call
is 2.

For samples diluted by normal cells an optional BAF model follows the
germline genotype instead: homozygous markers stay at 0 or 1, while
heterozygous ones move to ``w / 2 + (1 - w) s / c`` for a normal-cell
fraction ``w`` that is profiled over a grid per segment and state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import comb, logsumexp

from .signal import SIGMA_FLOOR

STATES = (0, 1, 2, 3, 4)
ALT_STATES = (0, 1, 3, 4)
CALL_COLUMNS = ("seq", "chrom", "start", "end", "n_loci", "state",
                "LR0", "LR1", "LR3", "LR4", "lrr_mean", "passed_r1", "passed_r2")
SIGMA_X_DEFAULT = 0.03
SIGMA_X_MIN_MARKERS = 20
LOG_2PI = math.log(2 * math.pi)


@dataclass
class CallerConfig:
    """Calling thresholds and BAF/LRR model parameters.

    ``r2_loss`` and ``r2_gain`` override ``r2`` for losses (state < 2)
    and gains (state > 2). ``sigma_x``, ``mu2`` and ``sigma2`` are
    estimated from the data when left as None; ``baseline_window`` (in
    markers on each side) switches the CN=2 baseline from the whole
    chromosome to a flanking window.
    """

    r1: float = 10.0
    r2: float = 1.0
    r2_loss: float | None = None
    r2_gain: float | None = None
    pA: float | None = None
    pB: float | None = None
    sigma_x: float | None = None
    mu2: float | None = None
    sigma2: float | None = None
    mode: str | None = None
    baseline_window: int | None = None
    normal_fractions: tuple | None = None

    def __post_init__(self):
        if not self.r1 > 0:
            raise ValueError("r1 must be positive")
        for r in (self.r2, self.r2_loss, self.r2_gain):
            if r is not None and not r > 0:
                raise ValueError("r2 values must be positive")
        if (self.pA is None) != (self.pB is None):
            if self.pA is None:
                self.pA = 1.0 - self.pB
            else:
                self.pB = 1.0 - self.pA
        if self.pA is not None:
            if not (0 <= self.pA <= 1 and 0 <= self.pB <= 1) or abs(self.pA + self.pB - 1) > 1e-9:
                raise ValueError("pA and pB must lie in [0, 1] and sum to 1")
        if self.sigma_x is not None and not self.sigma_x > 0:
            raise ValueError("sigma_x must be positive")
        if self.mode is None:
            self.mode = "max" if self.pA is None else "mixture"
        if self.mode not in ("mixture", "max"):
            raise ValueError("mode must be 'mixture' or 'max'")
        if self.mode == "mixture" and self.pA is None:
            raise ValueError("mixture mode needs pA and pB")
        if self.normal_fractions is not None:
            self.normal_fractions = tuple(float(w) for w in self.normal_fractions)
            if not self.normal_fractions or any(not 0 <= w < 1 for w in self.normal_fractions):
                raise ValueError("normal fractions must lie in [0, 1)")

    def r2_for(self, state):
        if state < 2 and self.r2_loss is not None:
            return self.r2_loss
        if state > 2 and self.r2_gain is not None:
            return self.r2_gain
        return self.r2


@dataclass
class CnvCall:
    state: int
    lr: dict
    passed_r1: bool
    passed_r2: bool
    lrr_mean: float
    seq: str = ""
    chrom: str = ""
    start: int = 0
    end: int = 0
    n_loci: int = 0
    best_state: int = 2
    extra: dict = field(default_factory=dict)


def _components(c, sigma_x):
    """(means, sds, kinds) of the genotype clusters at copy number ``c``;
    kind 0 = normal, 1 = half-normal rising from 0, 2 = from 1."""
    if c == 0:
        return np.array([0.5]), np.array([10 * sigma_x]), np.array([0])
    s = np.arange(c + 1)
    kinds = np.zeros(c + 1, int)
    kinds[0], kinds[-1] = 1, 2
    return s / c, np.full(c + 1, sigma_x), kinds


def _germline_components(c, sigma_x, w, pA, pB):
    """(means, sds, kinds, weights) for the contamination-aware model."""
    if c == 0:
        mu, sd, kinds = _components(0, sigma_x)
        return mu, sd, kinds, np.ones(1)
    if c == 1:
        s = np.array([0, 1])
    elif c == 2:
        s = np.array([1])
    else:
        s = np.arange(1, c)
    het_mu = 0.5 * w + (1.0 - w) * s / c
    het_kinds = np.where(het_mu == 0.0, 1, np.where(het_mu == 1.0, 2, 0))
    mu = np.concatenate(([0.0, 1.0], het_mu))
    kinds = np.concatenate(([1, 2], het_kinds))
    weights = np.concatenate(([pA * pA, pB * pB], np.full(s.size, 2 * pA * pB / s.size)))
    return mu, np.full(mu.size, sigma_x), kinds, weights


def _log_density(x, mu, sd, kinds):
    x = np.asarray(x, float)[..., None]
    z = (x - mu) / sd
    logphi = -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI
    logphi = np.where(kinds > 0, logphi + math.log(2.0), logphi)
    outside = ((kinds == 1) & (x < 0)) | ((kinds == 2) & (x > 1))
    return np.where(outside, -np.inf, logphi)


def baf_loglik(x, c, cfg: CallerConfig, sigma_x=None, normal_fraction=None):
    """Per-marker log-likelihood of BAF values ``x`` at copy number ``c``.

    With ``normal_fraction`` set, the contamination-aware germline model
    is used at that fraction; otherwise the genotype-mixture table.
    """
    if c not in STATES:
        raise ValueError(f"copy number must be one of {STATES}")
    x = np.asarray(x, float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("BAF values must lie in [0, 1]")
    sigma_x = cfg.sigma_x if sigma_x is None else sigma_x
    if sigma_x is None:
        sigma_x = SIGMA_X_DEFAULT
    if cfg.mode == "mixture" and cfg.pA is None:
        raise ValueError("mixture mode needs pA and pB")
    if normal_fraction is not None:
        pA, pB = (0.5, 0.5) if cfg.pA is None else (cfg.pA, cfg.pB)
        mu, sd, kinds, weights = _germline_components(c, sigma_x, normal_fraction, pA, pB)
        logc = _log_density(x, mu, sd, kinds)
        if cfg.mode == "max":
            return np.max(logc, axis=-1)
        with np.errstate(divide="ignore"):
            return logsumexp(logc + np.log(weights), axis=-1)
    mu, sd, kinds = _components(c, sigma_x)
    logc = _log_density(x, mu, sd, kinds)
    if cfg.mode == "max":
        return np.max(logc, axis=-1)
    s = np.arange(c + 1)
    with np.errstate(divide="ignore"):
        logw = np.log(comb(c, s)) + (c - s) * np.log(cfg.pA) + s * np.log(cfg.pB)
    return logsumexp(logc + logw, axis=-1)


def baf_likelihood(x, c, cfg: CallerConfig, sigma_x=None):
    """BAF density at copy number ``c`` (mixture or max over genotypes)."""
    return np.exp(baf_loglik(x, c, cfg, sigma_x))


def _normal_loglik(y, mu, sd):
    z = (y - mu) / sd
    return float(np.sum(-0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI))


def lrr_loglik(y, c, mu2, sigma2):
    """Gaussian log-likelihood of segment LRR values at copy number ``c``.

    ``c = 2`` uses the baseline ``(mu2, sigma2)``; other states use the
    segment's own mean and SD (``sigma2`` when the segment has a single
    value).
    """
    y = np.asarray(y, float)
    if y.size == 0:
        raise ValueError("empty segment")
    if c == 2:
        return _normal_loglik(y, mu2, sigma2)
    sd = float(np.std(y)) if y.size > 1 else sigma2
    return _normal_loglik(y, float(np.mean(y)), max(sd, SIGMA_FLOOR))


def estimate_sigma_x(baf):
    """SD of BAF values in (0.4, 0.6), or the default with too few markers."""
    baf = np.asarray(baf, float)
    mid = baf[np.isfinite(baf) & (baf > 0.4) & (baf < 0.6)]
    if mid.size < SIGMA_X_MIN_MARKERS:
        return SIGMA_X_DEFAULT
    return max(float(np.std(mid, ddof=1)), SIGMA_FLOOR)


def lrr_baseline(lrr):
    """Robust CN=2 level and SD of an LRR vector (median and scaled MAD)."""
    lrr = np.asarray(lrr, float)
    lrr = lrr[np.isfinite(lrr)]
    if lrr.size == 0:
        raise ValueError("no LRR values")
    mu = float(np.median(lrr))
    sd = 1.4826 * float(np.median(np.abs(lrr - mu)))
    if sd <= SIGMA_FLOOR:
        sd = max(float(np.std(lrr)), SIGMA_FLOOR)
    return mu, sd


def call_segment(x_r, y_r, cfg: CallerConfig, mu2=None, sigma2=None, sigma_x=None) -> CnvCall:
    """Call one segment.

    Parameters
    ----------
    x_r : BAF values of the segment (may be empty or contain NaN).
    y_r : LRR values of the segment (at least one finite value).
    cfg : CallerConfig
    mu2, sigma2, sigma_x : override the values in ``cfg``.
    """
    y = np.asarray(y_r, float)
    y = y[np.isfinite(y)]
    if y.size == 0:
        raise ValueError("empty segment")
    x = np.asarray(x_r, float)
    x = np.clip(x[np.isfinite(x)], 0.0, 1.0)
    mu2 = cfg.mu2 if mu2 is None else mu2
    sigma2 = cfg.sigma2 if sigma2 is None else sigma2
    if mu2 is None or sigma2 is None:
        raise ValueError("CN=2 baseline (mu2, sigma2) is required")
    sigma_x = cfg.sigma_x if sigma_x is None else sigma_x

    fractions = cfg.normal_fractions or (None,)
    w2 = None if cfg.normal_fractions is None else 0.0
    base_baf = float(np.sum(baf_loglik(x, 2, cfg, sigma_x, w2))) if x.size else 0.0
    base_lrr = lrr_loglik(y, 2, mu2, sigma2)
    lr, fraction = {}, {}
    for c in ALT_STATES:
        b, fraction[c] = 0.0, None
        if x.size:
            fits = [(float(np.sum(baf_loglik(x, c, cfg, sigma_x, w))), w) for w in fractions]
            b, fraction[c] = max(fits, key=lambda t: t[0])
            b -= base_baf
        lr[c] = b + lrr_loglik(y, c, mu2, sigma2) - base_lrr
    ybar = float(np.mean(y))
    # exact ties (e.g. all-homozygous BAF) go to the side of the LRR shift
    side = np.sign(ybar - mu2)
    best = max(ALT_STATES, key=lambda c: (lr[c], np.sign(c - 2) == side, -abs(c - 2), -c))
    passed_r1 = bool(lr[best] > cfg.r1)
    passed_r2 = bool(abs(ybar) > cfg.r2_for(best) * sigma2)
    state = best if passed_r1 and passed_r2 else 2
    extra = {} if cfg.normal_fractions is None else {"normal_fraction": fraction[best]}
    return CnvCall(state, lr, passed_r1, passed_r2, ybar, best_state=best, extra=extra)


def call_segments(segmentation_row, lrr, baf, cfg: CallerConfig, positions, chrom, lrr_mask=None, baf_mask=None):
    """Call every segment of one subject on one chromosome.

    ``lrr`` and ``baf`` are full-grid rows (masked or NaN where missing)
    in original units; ``segmentation_row`` is a
    :class:`gflcnv.segment.SegmentRow` on the same grid.
    """
    lrr = np.asarray(lrr, float).copy()
    baf = np.asarray(baf, float).copy()
    if lrr_mask is not None:
        lrr[~np.asarray(lrr_mask, bool)] = np.nan
    if baf_mask is not None:
        baf[~np.asarray(baf_mask, bool)] = np.nan
    if lrr.size != segmentation_row.n_loci or baf.size != lrr.size:
        raise ValueError("segmentation and signals are on different grids")
    sigma_x = cfg.sigma_x if cfg.sigma_x is not None else estimate_sigma_x(baf)
    if cfg.mu2 is None or cfg.sigma2 is None:
        chrom_mu, chrom_sd = lrr_baseline(lrr)
    calls = []
    for s, e in zip(segmentation_row.starts, segmentation_row.ends):
        y_r = lrr[s:e]
        if not np.any(np.isfinite(y_r)):
            continue
        if cfg.mu2 is not None and cfg.sigma2 is not None:
            mu2, sd2 = cfg.mu2, cfg.sigma2
        elif cfg.baseline_window:
            w = cfg.baseline_window
            flank = np.concatenate((lrr[max(0, s - w):s], lrr[e:e + w]))
            mu2, sd2 = lrr_baseline(flank) if np.isfinite(flank).sum() >= 10 else (chrom_mu, chrom_sd)
        else:
            mu2, sd2 = chrom_mu, chrom_sd
        call = call_segment(baf[s:e], y_r, cfg, mu2, sd2, sigma_x)
        call.seq, call.chrom = segmentation_row.label, chrom
        call.start, call.end, call.n_loci = int(positions[s]), int(positions[e - 1]), int(e - s)
        calls.append(call)
    return calls


def write_calls(path, calls):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CALL_COLUMNS)
        for c in calls:
            w.writerow([c.seq, c.chrom, c.start, c.end, c.n_loci, c.state,
                        *(f"{c.lr[s]:.6f}" for s in ALT_STATES),
                        f"{c.lrr_mean:.6f}", int(c.passed_r1), int(c.passed_r2)])


def read_calls(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != CALL_COLUMNS:
            raise ValueError(f"{path}: unexpected call table header")
        return [
            {"seq": r["seq"], "chrom": r["chrom"], "start": int(r["start"]), "end": int(r["end"]),
             "n_loci": int(r["n_loci"]), "state": int(r["state"])}
            for r in reader
        ]
