"""
Simulation studies built from the simulator, the pipeline and the scorers.

``normal_study`` inserts one CNV in the middle of a normal chromosome per
replicate; ``contamination_sweep`` dilutes one tumor with its matched
normal over a grid of normal-cell fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pipeline import PipelineConfig, run_chromosome
from .simulate import (
    CnvSpec,
    evaluate_het,
    evaluate_per_snp,
    mix_contamination,
    paint_calls,
    simulate_normal,
    simulate_tumor_pair,
    tumor_layout,
    TUMOR_LAYOUT_LOCI,
)


@dataclass
class StudyCell:
    """Per-SNP results of all replicates of one CNV size."""

    size: int
    tpr: float
    fdr: float
    mean_tpr: float
    mean_fdr: float
    counts: dict = field(default_factory=dict)
    per_replicate: list = field(default_factory=list)


def normal_study(sizes, types=("loss2", "loss1", "gain1", "gain2"), replicates=100, cfg=None,
                 n_loci=13000, seed=0, noise_sigma=0.2):
    """CNV insertion study; replicate ``r`` of a size uses ``types[r % len(types)]``.

    Returns one :class:`StudyCell` per size with pooled rates (``tpr``,
    ``fdr``) and replicate averages (``mean_tpr``, ``mean_fdr``).
    """
    cfg = cfg or PipelineConfig()
    out = []
    for size in sizes:
        reps = []
        pooled = {"tp": 0, "fp": 0, "true": 0, "called": 0}
        for r in range(replicates):
            kind = types[r % len(types)]
            smp = simulate_normal(n_loci, CnvSpec((n_loci - size) // 2, size, kind), noise_sigma, seed,
                                  stream_key=size * 100_000 + r)
            res = run_chromosome(smp.signals, cfg)
            rep = evaluate_per_snp(smp.states, paint_calls(smp.signals.grid.positions, res.calls))
            reps.append((kind, rep.tpr, rep.fdr))
            for k in pooled:
                pooled[k] += rep.counts[k]
        out.append(StudyCell(
            size,
            pooled["tp"] / pooled["true"],
            pooled["fp"] / pooled["called"] if pooled["called"] else 0.0,
            float(np.mean([t for _, t, _ in reps])),
            float(np.mean([f for _, _, f in reps])),
            pooled,
            reps,
        ))
    return out


@dataclass
class SweepPoint:
    fraction: float
    sensitivity: float
    specificity: float
    per_region: dict = field(default_factory=dict)


def contamination_sweep(fractions=None, cfg=None, seed=0, cnvs=None, n_loci=TUMOR_LAYOUT_LOCI,
                        noise_sigma=0.2, regions_of=None):
    """Het-SNP sensitivity and specificity of one tumor at each fraction.

    ``regions_of`` selects the variant types that count toward the
    sensitivity (all regions by default); specificity always uses every
    het SNP outside all regions.
    """
    fractions = np.round(np.linspace(0.0, 1.0, 21), 10) if fractions is None else np.asarray(fractions, float)
    cfg = cfg or PipelineConfig()
    cnvs = list(cnvs or tumor_layout())
    tumor, normal = simulate_tumor_pair(n_loci, cnvs, noise_sigma, seed, label="T")
    pos = tumor.signals.grid.positions
    all_regions = [(c.start, c.end) for c in cnvs]
    scored = [(c.start, c.end) for c in cnvs if regions_of is None or c.type in regions_of]
    points = []
    for w in fractions:
        mixed = mix_contamination(tumor.signals, normal.signals, float(w))
        res = run_chromosome(mixed, cfg)
        called = paint_calls(pos, res.calls)
        sens = evaluate_het(tumor.states, called, tumor.het, scored)
        spec = evaluate_het(tumor.states, called, tumor.het, all_regions)
        points.append(SweepPoint(float(w), sens.sensitivity, spec.specificity, sens.per_region))
    return points
