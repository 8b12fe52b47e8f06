"""
Multi-sequence signals on a shared locus grid.

A :class:`SignalMatrix` holds ``M`` aligned sequences measured on the
same ordered loci of one chromosome, with a 0/1 availability mask.
Masked cells carry no information: their stored value is irrelevant and
is kept at 0.0 so that nothing downstream can accidentally read it.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA"})
SIGNAL_KINDS = ("LRR", "BAF", "mBAF", "generic")
SIGMA_FLOOR = 1e-6


class SignalFormatError(ValueError):
    """Malformed signal input."""


@dataclass(frozen=True)
class LocusGrid:
    chromosome: str
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 1:
            raise ValueError("positions must be one-dimensional")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise SignalFormatError("non-monotone positions")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return int(self.positions.size)

    def __eq__(self, other):
        if not isinstance(other, LocusGrid):
            return NotImplemented
        return self.chromosome == other.chromosome and np.array_equal(
            self.positions, other.positions
        )

    __hash__ = None


@dataclass
class SignalMatrix:
    """``M x N`` observations with availability mask.

    Attributes
    ----------
    grid : LocusGrid
    values : ndarray, shape (M, N)
        Observed values; entries with ``mask == 0`` are stored as 0.0.
    mask : ndarray of bool, shape (M, N)
    labels : list of str
        One label per sequence.
    kinds : list of str
        Signal kind per row, one of ``LRR``, ``BAF``, ``mBAF``, ``generic``.
    scales : ndarray, shape (M,)
        Divisor applied by :func:`normalize` (1.0 for raw data), so fits
        can be mapped back to signal units.
    """

    grid: LocusGrid
    values: np.ndarray
    mask: np.ndarray
    labels: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    scales: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        mask = np.array(self.mask, dtype=bool, ndmin=2)
        if values.shape != mask.shape:
            raise ValueError("values and mask shapes differ")
        m, n = values.shape
        if m < 1:
            raise ValueError("need at least one sequence")
        if n != len(self.grid):
            raise ValueError(f"grid has {len(self.grid)} loci but values have {n} columns")
        if not np.all(mask.any(axis=1)):
            raise SignalFormatError("every sequence needs at least one observed value")
        if not np.all(np.isfinite(values[mask])):
            raise SignalFormatError("non-finite value at an observed entry")
        values = np.where(mask, values, 0.0)
        self.values, self.mask = values, mask
        if not self.labels:
            self.labels = [f"seq{i + 1}" for i in range(m)]
        if not self.kinds:
            self.kinds = ["generic"] * m
        self.labels, self.kinds = list(self.labels), list(self.kinds)
        if len(self.labels) != m or len(self.kinds) != m:
            raise ValueError("labels and kinds need one entry per sequence")
        for kind in self.kinds:
            if kind not in SIGNAL_KINDS:
                raise ValueError(f"unknown signal kind {kind!r}")
        self.scales = np.ones(m) if self.scales is None else np.asarray(self.scales, float)
        if self.degenerate is None:
            self.degenerate = np.zeros(m, dtype=bool)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_sequences(self):
        return self.values.shape[0]

    @property
    def n_loci(self):
        return self.values.shape[1]

    def row(self, i):
        """Observed values of row ``i`` in locus order."""
        return self.values[i, self.mask[i]]

    def subset(self, rows: Sequence[int]) -> "SignalMatrix":
        rows = list(rows)
        return SignalMatrix(
            self.grid,
            self.values[rows],
            self.mask[rows],
            [self.labels[i] for i in rows],
            [self.kinds[i] for i in rows],
            self.scales[rows],
            self.degenerate[rows],
        )


@dataclass
class NoiseScale:
    sigmas: np.ndarray
    estimator: str = "MAD"
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        self.sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if self.degenerate is None:
            self.degenerate = self.sigmas <= SIGMA_FLOOR


def _parse_value(token, lineno, column):
    token = token.strip()
    if token in MISSING_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise SignalFormatError(f"line {lineno}: bad value {token!r} in column {column}") from None


def load_signals(path, fmt="tsv", kinds=None):
    """Read a signal TSV into one :class:`SignalMatrix` per chromosome.

    The header is ``chrom  pos  <seq1> <seq2> ...``; each following line is
    one locus. Empty cells and ``NA`` are missing. Positions must be strictly
    increasing within a chromosome as they appear in the file.

    Returns
    -------
    dict
        Chromosome label -> SignalMatrix, in file order.
    """
    if fmt != "tsv":
        raise ValueError(f"unsupported format {fmt!r}")
    path = Path(path)
    rows_by_chrom: dict[str, list] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise SignalFormatError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "chrom" or header[1] != "pos":
            raise SignalFormatError(f"{path}: header must start with 'chrom<TAB>pos' and name >= 1 sequence")
        labels = header[2:]
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != len(header):
                raise SignalFormatError(
                    f"line {lineno}: malformed row length {len(rec)}, expected {len(header)}"
                )
            try:
                pos = int(rec[1])
            except ValueError:
                raise SignalFormatError(f"line {lineno}: bad position {rec[1]!r}") from None
            vals = [_parse_value(tok, lineno, c) for c, tok in enumerate(rec[2:], start=3)]
            rows_by_chrom.setdefault(rec[0], []).append((pos, vals))

    if kinds is None:
        kinds = [_guess_kind(label) for label in labels]
    out = {}
    for chrom, recs in rows_by_chrom.items():
        positions = np.array([p for p, _ in recs], dtype=np.int64)
        if positions.size < 2:
            raise SignalFormatError(f"chromosome {chrom}: fewer than 2 loci")
        if np.any(np.diff(positions) <= 0):
            raise SignalFormatError(f"chromosome {chrom}: non-monotone positions")
        data = np.array([v for _, v in recs], dtype=np.float64).T
        mask = ~np.isnan(data)
        out[chrom] = SignalMatrix(LocusGrid(chrom, positions), np.nan_to_num(data), mask, labels, list(kinds))
    return out


def _guess_kind(label):
    upper = label.upper()
    for kind in ("MBAF", "BAF", "LRR"):
        if upper.endswith(kind) or upper.startswith(kind):
            return "mBAF" if kind == "MBAF" else kind
    return "generic"


def write_signals(path, matrices):
    """Write signal matrices (all with the same labels) in the TSV layout."""
    matrices = list(matrices)
    labels = matrices[0].labels
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["chrom", "pos", *labels])
        for sm in matrices:
            if sm.labels != labels:
                raise ValueError("all matrices must share sequence labels")
            for j, pos in enumerate(sm.grid.positions):
                cells = [repr(float(sm.values[i, j])) if sm.mask[i, j] else "NA" for i in range(sm.n_sequences)]
                w.writerow([sm.grid.chromosome, int(pos), *cells])


def compute_mbaf(baf, mask=None, het_band=0.03):
    """Mirrored BAF restricted to heterozygous markers.

    Values inside ``[het_band, 1 - het_band]`` map to ``max(b, 1 - b)``;
    everything else (homozygous calls and missing input) is masked out.

    Returns
    -------
    (values, mask) : tuple of ndarray
    """
    if not 0 <= het_band < 0.5:
        raise ValueError("het_band must lie in [0, 0.5)")
    baf = np.asarray(baf, dtype=float)
    mask = np.isfinite(baf) if mask is None else np.asarray(mask, dtype=bool) & np.isfinite(baf)
    b = np.where(mask, baf, 0.0)
    keep = mask & (b >= het_band) & (b <= 1.0 - het_band)
    return np.where(keep, np.maximum(b, 1.0 - b), 0.0), keep


def mbaf_matrix(baf_signals: SignalMatrix, het_band=0.03) -> SignalMatrix:
    """Apply :func:`compute_mbaf` to every BAF row of a matrix."""
    vals = np.empty_like(baf_signals.values)
    mask = np.empty_like(baf_signals.mask)
    for i in range(baf_signals.n_sequences):
        vals[i], mask[i] = compute_mbaf(baf_signals.values[i], baf_signals.mask[i], het_band)
    labels = [lab[:-3] + "mBAF" if lab.upper().endswith("BAF") else lab + ".mBAF" for lab in baf_signals.labels]
    return SignalMatrix(baf_signals.grid, vals, mask, labels, ["mBAF"] * baf_signals.n_sequences)


def normalize(signals: SignalMatrix, scales: NoiseScale) -> SignalMatrix:
    """Divide each observed row by its noise scale.

    The divisor is recorded (cumulatively) in ``scales`` of the result, and
    rows whose scale sits at the floor are flagged in ``degenerate``.
    """
    sig = np.maximum(np.asarray(scales.sigmas, float), SIGMA_FLOOR)
    if sig.shape != (signals.n_sequences,):
        raise ValueError("one scale per sequence required")
    degenerate = signals.degenerate | (sig <= SIGMA_FLOOR)
    if degenerate.any():
        logger.warning("degenerate-scale rows: %s", [signals.labels[i] for i in np.flatnonzero(degenerate)])
    return replace(
        signals,
        values=signals.values / sig[:, None],
        mask=signals.mask.copy(),
        scales=signals.scales * sig,
        degenerate=degenerate,
    )


def stack_union(signals: Sequence[SignalMatrix]) -> SignalMatrix:
    """Stack matrices measured at different loci on the union grid.

    Each sequence keeps its own observed loci; it is masked wherever it
    had no measurement.
    """
    signals = list(signals)
    if not signals:
        raise ValueError("nothing to stack")
    chrom = signals[0].grid.chromosome
    for sm in signals:
        if sm.grid.chromosome != chrom:
            raise SignalFormatError(f"chromosome mismatch: {chrom} vs {sm.grid.chromosome}")
    union = np.unique(np.concatenate([sm.grid.positions for sm in signals]))
    m_total = sum(sm.n_sequences for sm in signals)
    values = np.zeros((m_total, union.size))
    mask = np.zeros((m_total, union.size), dtype=bool)
    labels, kinds, scales, degenerate = [], [], [], []
    r = 0
    for sm in signals:
        cols = np.searchsorted(union, sm.grid.positions)
        rows = slice(r, r + sm.n_sequences)
        values[rows, cols] = sm.values
        mask[rows, cols] = sm.mask
        labels += sm.labels
        kinds += sm.kinds
        scales.append(sm.scales)
        degenerate.append(sm.degenerate)
        r += sm.n_sequences
    return SignalMatrix(
        LocusGrid(chrom, union), values, mask, labels, kinds, np.concatenate(scales), np.concatenate(degenerate)
    )
