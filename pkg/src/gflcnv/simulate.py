"""
Synthetic LRR/BAF data and per-SNP scoring.

Samples are generated from germline genotypes (B-allele counts 0/1/2)
and a copy-number state per locus. LRR is the state's shift plus
Gaussian noise. BAF sits at ``s / c`` for a tumor genotype with ``s`` of
``c`` copies being B, with Gaussian noise around interior clusters and
half-normal noise pushed inward at 0 and 1; a region with no copies
gives a broad blob around 1/2.

Random draws come from PCG64 streams derived with ``SeedSequence``:
one stream per (seed, stream key), so the draws of one sequence never
depend on how many other sequences or threads there are.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal import LocusGrid, SignalMatrix

CNV_TYPES = {"loss2": 0, "loss1": 1, "gain1": 3, "gain2": 4, "cnloh": 2}
DEFAULT_LRR_SHIFT = {0: -3.0, 1: -0.66, 2: 0.0, 3: 0.4, 4: 0.7}
TRUTH_COLUMNS = ("seq", "chrom", "start", "end", "state")

# imbalance regions for the tumor dilution design on a 6000-locus chromosome:
# copy-neutral LOH, hemizygous losses from 30 loci up, gains and one
# homozygous deletion
TUMOR_LAYOUT_LOCI = 6000
TUMOR_LAYOUT = (
    (200, 300, "cnloh"),
    (800, 37, "loss1"),
    (1200, 120, "loss1"),
    (1700, 400, "loss1"),
    (2500, 60, "gain1"),
    (3000, 250, "gain1"),
    (3600, 80, "gain2"),
    (4100, 150, "cnloh"),
    (4600, 30, "loss1"),
    (5200, 200, "loss2"),
)


def stream(seed, *key) -> np.random.Generator:
    """Independent generator for ``seed`` and an integer stream key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


@dataclass(frozen=True)
class CnvSpec:
    """A variant region: 0-based ``start`` locus and ``length`` loci."""

    start: int
    length: int
    type: str
    lrr_shift: float | None = None

    def __post_init__(self):
        if self.type not in CNV_TYPES:
            raise ValueError(f"unknown CNV type {self.type!r}; expected one of {sorted(CNV_TYPES)}")
        if self.length < 1:
            raise ValueError("CNV length must be >= 1")
        if self.start < 0:
            raise ValueError("CNV start must be >= 0")

    @property
    def state(self):
        return CNV_TYPES[self.type]

    @property
    def end(self):
        return self.start + self.length

    @property
    def shift(self):
        return DEFAULT_LRR_SHIFT[self.state] if self.lrr_shift is None else self.lrr_shift


@dataclass
class SimulatedSample:
    """One subject on one chromosome.

    ``signals`` has two rows, LRR then BAF. ``states`` is the true copy
    number per locus and ``genotype`` the germline B-allele count.
    """

    signals: SignalMatrix
    states: np.ndarray
    genotype: np.ndarray
    cnvs: list = field(default_factory=list)
    label: str = "sample"

    @property
    def het(self):
        return self.genotype == 1

    @property
    def lrr(self):
        return self.signals.values[0]

    @property
    def baf(self):
        return self.signals.values[1]


def _check_regions(n_loci, cnvs):
    cnvs = [cnvs] if isinstance(cnvs, CnvSpec) else list(cnvs or [])
    for c in cnvs:
        if c.end > n_loci:
            raise ValueError(f"CNV {c} extends past {n_loci} loci")
    order = sorted(cnvs, key=lambda c: c.start)
    for a, b in zip(order, order[1:]):
        if b.start < a.end:
            raise ValueError("CNV regions overlap")
    return cnvs


def _tumor_b_count(rng, genotype, state, loh):
    """B copies among ``state`` copies derived from the germline genotype."""
    n = genotype.size
    s = np.zeros(n, int)
    if state == 0:
        return s
    hom_b = genotype == 2
    het = genotype == 1
    s[hom_b] = state
    if state == 1:
        s[het] = rng.integers(0, 2, het.sum())
    elif state == 2:
        s[het] = np.where(rng.random(het.sum()) < 0.5, 0, 2) if loh else 1
    else:
        s[het] = rng.integers(1, state, het.sum())
    return s


def _baf(rng, s, c, sigma_x, hom_sigma):
    n = s.size
    out = np.empty(n)
    if c == 0:
        return np.clip(rng.normal(0.5, 10 * sigma_x, n), 0.0, 1.0)
    mean = s / c
    lo, hi = mean == 0.0, mean == 1.0
    mid = ~(lo | hi)
    out[lo] = np.abs(rng.normal(0.0, hom_sigma, lo.sum()))
    out[hi] = 1.0 - np.abs(rng.normal(0.0, hom_sigma, hi.sum()))
    out[mid] = rng.normal(mean[mid], sigma_x)
    return np.clip(out, 0.0, 1.0)


def _signals(rng, genotype, states, loh, noise_sigma, sigma_x, hom_sigma, label, chrom, spacing, shifts):
    n = genotype.size
    lrr = shifts + rng.normal(0.0, noise_sigma, n)
    baf = np.empty(n)
    for c in np.unique(states):
        for flag in (False, True):
            sel = (states == c) & (loh == flag)
            if sel.any():
                s = _tumor_b_count(rng, genotype[sel], int(c), flag)
                baf[sel] = _baf(rng, s, int(c), sigma_x, hom_sigma)
    grid = LocusGrid(chrom, spacing * np.arange(1, n + 1, dtype=np.int64))
    return SignalMatrix(grid, np.vstack([lrr, baf]), np.ones((2, n), bool),
                        [f"{label}.LRR", f"{label}.BAF"], ["LRR", "BAF"])


def _layout(n_loci, cnvs):
    states = np.full(n_loci, 2)
    loh = np.zeros(n_loci, bool)
    shifts = np.zeros(n_loci)
    for c in cnvs:
        states[c.start:c.end] = c.state
        loh[c.start:c.end] = c.type == "cnloh"
        shifts[c.start:c.end] = c.shift
    return states, loh, shifts


def draw_genotypes(rng, n_loci, p_b=0.5):
    """Germline B-allele counts under Hardy-Weinberg proportions."""
    return rng.binomial(2, p_b, n_loci)


def simulate_normal(n_loci, cnv, noise_sigma=0.2, seed=0, *, sigma_x=0.03, hom_sigma=0.01, p_b=0.5,
                    label="sample", chrom="1", spacing=1000, stream_key=0) -> SimulatedSample:
    """One subject with the given variant region(s) on a normal background.

    ``hom_sigma`` is the spread of homozygous BAF clusters; keeping it
    below the heterozygous band edge keeps homozygotes out of mBAF.
    """
    if n_loci < 2:
        raise ValueError("need at least 2 loci")
    cnvs = _check_regions(n_loci, cnv)
    rng = stream(seed, stream_key)
    genotype = draw_genotypes(rng, n_loci, p_b)
    states, loh, shifts = _layout(n_loci, cnvs)
    sig = _signals(rng, genotype, states, loh, noise_sigma, sigma_x, hom_sigma, label, chrom, spacing, shifts)
    return SimulatedSample(sig, states, genotype, cnvs, label)


def simulate_tumor_pair(n_loci, cnvs, noise_sigma=0.2, seed=0, *, sigma_x=0.03, hom_sigma=0.01, p_b=0.5,
                        label="tumor", chrom="1", spacing=1000, stream_key=0):
    """Tumor sample and its matched normal (same genotypes, no variants,
    independent noise)."""
    cnvs = _check_regions(n_loci, cnvs)
    rng = stream(seed, stream_key)
    genotype = draw_genotypes(rng, n_loci, p_b)
    states, loh, shifts = _layout(n_loci, cnvs)
    tumor = _signals(rng, genotype, states, loh, noise_sigma, sigma_x, hom_sigma, label, chrom, spacing, shifts)
    normal = _signals(rng, genotype, np.full(n_loci, 2), np.zeros(n_loci, bool), noise_sigma, sigma_x, hom_sigma,
                      label, chrom, spacing, np.zeros(n_loci))
    return SimulatedSample(tumor, states, genotype, cnvs, label), SimulatedSample(normal, np.full(n_loci, 2), genotype, [], label)


def tumor_layout():
    """The default dilution-study regions as :class:`CnvSpec` objects."""
    return [CnvSpec(start, length, kind) for start, length, kind in TUMOR_LAYOUT]


def mix_contamination(tumor: SignalMatrix, normal: SignalMatrix, fraction) -> SignalMatrix:
    """``fraction * normal + (1 - fraction) * tumor`` on every row.

    A linear blend of both LRR and BAF; real arrays mix intensities,
    which this ignores.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    if tumor.grid != normal.grid or tumor.shape != normal.shape:
        raise ValueError("tumor and normal are on different grids")
    mask = tumor.mask & normal.mask
    values = fraction * normal.values + (1.0 - fraction) * tumor.values
    if fraction == 0:
        values = tumor.values.copy()
    elif fraction == 1:
        values = normal.values.copy()
    return SignalMatrix(tumor.grid, values, mask, list(tumor.labels), list(tumor.kinds))


# ---------------------------------------------------------------------------
# scoring

@dataclass
class EvalReport:
    tpr: float = math.nan
    fdr: float = math.nan
    sensitivity: float = math.nan
    specificity: float = math.nan
    counts: dict = field(default_factory=dict)
    per_region: dict = field(default_factory=dict)

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            return v
        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True)


def evaluate_per_snp(truth_states, called_states) -> EvalReport:
    """Per-SNP true positive rate and false discovery rate.

    A SNP is a true variant when its true state is not 2 and is called
    when its called state is not 2. FDR is 0 when nothing is called.
    """
    truth = np.asarray(truth_states) != 2
    called = np.asarray(called_states) != 2
    if truth.shape != called.shape:
        raise ValueError("truth and calls cover different loci")
    tp = int(np.sum(truth & called))
    fp = int(np.sum(~truth & called))
    n_true, n_called = int(truth.sum()), int(called.sum())
    tpr = tp / n_true if n_true else math.nan
    fdr = fp / n_called if n_called else 0.0
    return EvalReport(tpr=tpr, fdr=fdr, counts={"tp": tp, "fp": fp, "true": n_true, "called": n_called})


def evaluate_het(truth_states, called_states, het, regions: Sequence[tuple] = ()) -> EvalReport:
    """Sensitivity and specificity over heterozygous SNPs.

    Sensitivity of a region is the share of its het SNPs whose call equals
    the true state; the pooled value counts all regions together.
    Specificity is the share of het SNPs outside all regions called 2.
    ``regions`` are ``(start, end)`` locus index pairs, end exclusive;
    when empty, loci with a true state other than 2 form the perturbed set.
    """
    truth = np.asarray(truth_states)
    called = np.asarray(called_states)
    het = np.asarray(het, bool)
    perturbed = np.zeros(truth.size, bool)
    if regions:
        for s, e in regions:
            perturbed[s:e] = True
    else:
        perturbed = truth != 2
    per_region = {}
    for s, e in regions:
        h = het[s:e]
        per_region[f"{s}-{e}"] = float(np.mean(called[s:e][h] == truth[s:e][h])) if h.any() else math.nan
    hp = het & perturbed
    correct = int(np.sum(called[hp] == truth[hp]))
    hn = het & ~perturbed
    normal_ok = int(np.sum(called[hn] == 2))
    return EvalReport(
        sensitivity=correct / hp.sum() if hp.any() else math.nan,
        specificity=normal_ok / hn.sum() if hn.any() else math.nan,
        counts={"het_perturbed": int(hp.sum()), "het_correct": correct,
                "het_unperturbed": int(hn.sum()), "het_unperturbed_cn2": normal_ok},
        per_region=per_region,
    )


def paint_calls(positions, calls, default=2):
    """Per-locus states from call records with ``start``/``end`` positions."""
    positions = np.asarray(positions)
    out = np.full(positions.size, default)
    for c in calls:
        start = c["start"] if isinstance(c, dict) else c.start
        end = c["end"] if isinstance(c, dict) else c.end
        state = c["state"] if isinstance(c, dict) else c.state
        lo = np.searchsorted(positions, start, side="left")
        hi = np.searchsorted(positions, end, side="right")
        out[lo:hi] = state
    return out


def write_truth(path, samples: Sequence[SimulatedSample]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for smp in samples:
            pos = smp.signals.grid.positions
            for c in sorted(smp.cnvs, key=lambda c: c.start):
                w.writerow([smp.label, smp.signals.grid.chromosome, int(pos[c.start]), int(pos[c.end - 1]), c.state])


def read_truth(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != TRUTH_COLUMNS:
            raise ValueError(f"{path}: unexpected truth header")
        return [{"seq": r["seq"], "chrom": r["chrom"], "start": int(r["start"]), "end": int(r["end"]),
                 "state": int(r["state"])} for r in reader]
