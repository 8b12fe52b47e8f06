"""
From fitted means to discrete segments.

Fitted rows are piecewise constant only up to small residual jumps, so
jumps are thresholded first. The default "ruler" keeps jumps larger than
``c * gamma`` with ``gamma = max(a s, min(D, b s))``, where ``s`` is the
row's noise SD and ``D`` its largest jump: the largest jump sets the
scale of a real change, clamped to ``[a s, b s]``.

Change points are 0-based indices of the first locus of each new segment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gfl import GflSolution
from .signal import LocusGrid, SignalMatrix

SEGMENT_COLUMNS = ("seq", "chrom", "start_pos", "end_pos", "n_loci", "mean_raw", "mean_beta")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    a: float = 1.0
    b: float = 5.0
    c: float = 0.2

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("need 0 < a < b")
        if not 0 < self.c < 1:
            raise ValueError("need 0 < c < 1")


@dataclass
class SegmentRow:
    """Segmentation of one sequence.

    ``starts``/``ends`` are 0-based, end-exclusive locus indices.
    ``means_beta`` averages the fit over each segment; ``means_raw``
    averages the observed data instead, which undoes the shrinkage the
    penalties put on segment levels. Segments without observations fall
    back to the fitted mean.
    """

    change_points: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    means_beta: np.ndarray
    means_raw: np.ndarray
    label: str = ""

    @property
    def lengths(self):
        return self.ends - self.starts

    @property
    def n_segments(self):
        return int(self.starts.size)

    @property
    def n_loci(self):
        return int(self.ends[-1]) if self.ends.size else 0

    def fitted(self, raw=False):
        """Piecewise-constant row from the segment means."""
        return np.repeat(self.means_raw if raw else self.means_beta, self.lengths)

    def segment_of(self, j):
        return int(np.searchsorted(self.starts, j, side="right") - 1)


@dataclass
class Segmentation:
    grid: LocusGrid
    rows: list = field(default_factory=list)
    scales: np.ndarray | None = None

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)


def extract_jumps(sol, row):
    """Successive differences of fitted row ``row``."""
    beta = sol.beta if isinstance(sol, GflSolution) else np.asarray(sol, float)
    beta = np.atleast_2d(beta)
    return np.diff(beta[row])


def ruler_cutoff(jumps, sigma, rule=ThresholdRule()):
    """Return ``(gamma, cutoff)`` for a row of jumps."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    jumps = np.asarray(jumps, float)
    d_max = float(np.max(np.abs(jumps))) if jumps.size else 0.0
    gamma = max(rule.a * sigma, min(d_max, rule.b * sigma))
    return gamma, rule.c * gamma


def threshold_ruler(jumps, sigma, rule=ThresholdRule()):
    """Change points whose jump strictly exceeds ``c * gamma``."""
    _, cutoff = ruler_cutoff(jumps, sigma, rule)
    return np.flatnonzero(np.abs(np.asarray(jumps, float)) > cutoff) + 1


def mbic_score(y, change_points, rss0=None):
    """Score of the piecewise-constant fit of ``y`` with the given breaks.

    ``(n/2) log(RSS_0 / RSS_k) - 1.5 k log n - 0.5 sum_s log(L_s / n)``
    with ``n`` observations, ``k`` breaks and segment lengths ``L_s``.
    """
    y = np.asarray(y, float)
    n = y.size
    cps = np.asarray(change_points, int)
    starts = np.concatenate(([0], cps))
    lengths = np.diff(np.concatenate((starts, [n])))
    if rss0 is None:
        rss0 = float(np.sum((y - y.mean()) ** 2))
    sums = np.add.reduceat(y, starts)
    rss = float(np.sum(y * y) - np.sum(sums * sums / lengths))
    tiny = 1e-300
    gain = 0.5 * n * (math.log(max(rss0, tiny)) - math.log(max(rss, tiny)))
    return gain - 1.5 * cps.size * math.log(n) - 0.5 * float(np.sum(np.log(lengths / n)))


def threshold_mbic(y_row, jumps, mask=None, k_max=None):
    """Keep the ``k`` largest jumps, with ``k`` maximizing :func:`mbic_score`.

    Scores use observed values only; a change point at a masked locus is
    moved to the next observed one for scoring.
    """
    y_row = np.asarray(y_row, float)
    jumps = np.asarray(jumps, float)
    n = y_row.size
    mask = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
    obs = np.flatnonzero(mask)
    y = y_row[obs]
    if k_max is None:
        k_max = min(50, n // 10)
    order = np.argsort(-np.abs(jumps), kind="stable")
    order = order[np.abs(jumps[order]) > 0][:k_max]
    rss0 = float(np.sum((y - y.mean()) ** 2))
    best_k, best = 0, mbic_score(y, [], rss0)
    for k in range(1, order.size + 1):
        cps = np.sort(order[:k] + 1)
        at = np.unique(np.searchsorted(obs, cps))
        at = at[(at > 0) & (at < y.size)]
        if at.size < k:
            continue  # two breaks without data between them
        score = mbic_score(y, at, rss0)
        if score > best:
            best_k, best = k, score
    return np.sort(order[:best_k] + 1)


def build_segmentation(beta_row, change_points, y_row=None, mask=None, label=""):
    """Segments between consecutive change points with their means."""
    beta_row = np.asarray(beta_row, float)
    n = beta_row.size
    cps = np.unique(np.asarray(change_points, int))
    if cps.size and (cps[0] < 1 or cps[-1] > n - 1):
        raise ValueError("change points must lie in 1..N-1")
    starts = np.concatenate(([0], cps))
    ends = np.concatenate((cps, [n]))
    lengths = ends - starts
    means = np.add.reduceat(beta_row, starts) / lengths
    flat = np.maximum.reduceat(beta_row, starts) == np.minimum.reduceat(beta_row, starts)
    means = np.where(flat, beta_row[starts], means)
    raw = means.copy()
    if y_row is not None:
        y_row = np.asarray(y_row, float)
        mask = np.isfinite(y_row) if mask is None else np.asarray(mask, bool)
        cnt = np.add.reduceat(mask.astype(float), starts)
        tot = np.add.reduceat(np.where(mask, y_row, 0.0), starts)
        raw = np.where(cnt > 0, tot / np.maximum(cnt, 1), means)
    return SegmentRow(cps, starts, ends, means, raw, label)


def merge_changepoints(a, b):
    """Sorted union of two change-point sets on the same grid."""
    if isinstance(a, SegmentRow) and isinstance(b, SegmentRow):
        if a.n_loci != b.n_loci:
            raise GridMismatchError(f"segmentations cover {a.n_loci} and {b.n_loci} loci")
    ca = a.change_points if isinstance(a, SegmentRow) else np.asarray(a, int)
    cb = b.change_points if isinstance(b, SegmentRow) else np.asarray(b, int)
    return np.union1d(ca, cb).astype(int)


def segment_solution(sol, signals: SignalMatrix, sigmas, method="ruler", rule=ThresholdRule()):
    """Threshold every row of a fit and build its segments.

    ``sigmas`` are the noise SDs in the units of ``sol.beta`` (1 for
    normalized data). Rows flagged degenerate become a single segment.
    """
    beta = sol.beta if isinstance(sol, GflSolution) else np.asarray(sol, float)
    sig = np.broadcast_to(np.asarray(sigmas, float), (signals.n_sequences,))
    rows = []
    for i in range(signals.n_sequences):
        d = np.diff(beta[i])
        if signals.degenerate[i]:
            cps = np.zeros(0, int)
        elif method == "ruler":
            cps = threshold_ruler(d, sig[i], rule)
        elif method == "mbic":
            cps = threshold_mbic(signals.values[i], d, signals.mask[i])
        else:
            raise ValueError(f"unknown threshold method {method!r}")
        rows.append(build_segmentation(beta[i], cps, signals.values[i], signals.mask[i], signals.labels[i]))
    return Segmentation(signals.grid, rows, signals.scales.copy())


def write_segments(path, segmentations: Sequence[Segmentation]):
    """Segment table; means are reported in the original signal units."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SEGMENT_COLUMNS)
        for seg in segmentations:
            pos = seg.grid.positions
            scales = np.ones(len(seg)) if seg.scales is None else seg.scales
            for row, scale in zip(seg.rows, scales):
                for s, e, mr, mb in zip(row.starts, row.ends, row.means_raw, row.means_beta):
                    w.writerow([row.label, seg.grid.chromosome, int(pos[s]), int(pos[e - 1]), int(e - s),
                                f"{mr * scale:.10g}", f"{mb * scale:.10g}"])


def read_segments(path):
    """Read a segment table into a list of dict records."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != SEGMENT_COLUMNS:
            raise ValueError(f"{path}: unexpected segment table header")
        out = []
        for rec in reader:
            out.append({
                "seq": rec["seq"], "chrom": rec["chrom"],
                "start_pos": int(rec["start_pos"]), "end_pos": int(rec["end_pos"]),
                "n_loci": int(rec["n_loci"]),
                "mean_raw": float(rec["mean_raw"]), "mean_beta": float(rec["mean_beta"]),
            })
        return out
