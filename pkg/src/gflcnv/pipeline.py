"""
End-to-end processing of one signal file: per chromosome, build the fit
rows (LRR and mirrored BAF of every subject), normalize, choose
penalties, solve, threshold, merge change points per subject and call.

Subjects are recognized from row labels: ``NAME.LRR``, ``NAME.BAF`` and
``NAME.mBAF`` belong to subject ``NAME``. BAF rows are never fitted
directly; their mirrored version is (unless an mBAF row is supplied),
and the raw BAF feeds the caller.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .caller import CallerConfig, call_segments
from .gfl import GflSolution, PenaltyConfig, solve_gfl
from .segment import (
    Segmentation,
    ThresholdRule,
    build_segmentation,
    merge_changepoints,
    segment_solution,
)
from .signal import SignalMatrix, mbaf_matrix, normalize
from .tuning import TuningInputs, compute_lambdas, estimate_scales

logger = logging.getLogger(__name__)

SUFFIXES = ("LRR", "BAF", "mBAF")


@dataclass
class PipelineConfig:
    """All knobs of a run, flat so it can round-trip through a config file.

    ``lambda1..3`` override the tuned penalties when set (in noise-SD
    units, as the fit runs on normalized rows). ``p`` defaults to full
    sharing between the rows of the fit. ``polish`` is off: thresholding
    absorbs the small residual jumps of the smoothed fit.
    """

    c1: float = 0.1
    c2: float = 2.0
    c3: float = 2.0
    p: float = 1.0
    rho: float | None = None
    estimator: str = "MAD"
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    epsilon: float = 1e-8
    max_iters: int = 10_000
    polish: bool = False
    threshold: str = "ruler"
    a: float = 1.0
    b: float = 5.0
    c: float = 0.2
    het_band: float = 0.03
    use_mbaf: bool = True
    joint_subjects: bool = False
    r1: float = 10.0
    r2: float = 1.0
    r2_loss: float | None = None
    r2_gain: float | None = None
    pA: float | None = None
    pB: float | None = None
    sigma_x: float | None = None
    mode: str | None = None
    baseline_window: int | None = None
    normal_fractions: tuple | None = None

    def __post_init__(self):
        if self.threshold not in ("ruler", "mbic"):
            raise ValueError("threshold must be 'ruler' or 'mbic'")
        self.rule  # validates a, b, c
        self.caller()

    @property
    def rule(self):
        return ThresholdRule(self.a, self.b, self.c)

    def caller(self) -> CallerConfig:
        return CallerConfig(
            r1=self.r1, r2=self.r2, r2_loss=self.r2_loss, r2_gain=self.r2_gain, pA=self.pA, pB=self.pB,
            sigma_x=self.sigma_x, mode=self.mode, baseline_window=self.baseline_window,
            normal_fractions=self.normal_fractions,
        )

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data):
        """Build from string or typed values; unknown keys are an error."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in data.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, raw, cls.__dataclass_fields__[key].default)
        return cls(**kw)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("", "none", "null"):
        return None
    if key == "normal_fractions":
        return tuple(float(t) for t in text.replace(",", " ").split())
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, str):
        return text
    if isinstance(default, int) or key == "baseline_window":
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def split_label(label):
    """``(subject, suffix)`` for ``NAME.LRR``-style labels, else ``(label, None)``."""
    for sep in (".", "_"):
        head, _, tail = label.rpartition(sep)
        if head and tail in SUFFIXES:
            return head, tail
    return label, None


def group_subjects(labels):
    """Subject name -> {suffix: row index}, in order of first appearance."""
    out: dict = {}
    for i, lab in enumerate(labels):
        subject, suffix = split_label(lab)
        slot = out.setdefault(subject, {})
        key = suffix or "generic"
        if key in slot:
            raise ValueError(f"duplicate {key} row for subject {subject!r}")
        slot[key] = i
    return out


def fit_rows(signals: SignalMatrix, cfg: PipelineConfig) -> SignalMatrix:
    """Rows that enter the fit: everything except raw BAF, plus mBAF
    derived from BAF for subjects without an mBAF row."""
    keep = [i for i, k in enumerate(signals.kinds) if k != "BAF"]
    parts = [signals.subset(keep)] if keep else []
    if cfg.use_mbaf:
        subjects = group_subjects(signals.labels)
        need = [slot["BAF"] for slot in subjects.values() if "BAF" in slot and "mBAF" not in slot]
        if need:
            parts.append(mbaf_matrix(signals.subset(need), cfg.het_band))
    else:
        parts = [signals.subset([i for i in keep if signals.kinds[i] != "mBAF"])] if keep else []
    if not parts:
        raise ValueError("no rows to segment")
    if len(parts) == 1:
        return parts[0]
    return SignalMatrix(
        signals.grid,
        np.vstack([p.values for p in parts]),
        np.vstack([p.mask for p in parts]),
        sum((p.labels for p in parts), []),
        sum((p.kinds for p in parts), []),
    )


def penalties(normalized: SignalMatrix, cfg: PipelineConfig) -> PenaltyConfig:
    """Tuned penalties for noise-normalized rows (sigma = 1), with any
    explicit overrides applied."""
    m, n = normalized.shape
    tuned = compute_lambdas(TuningInputs(n, m, cfg.c1, cfg.c2, cfg.c3, cfg.p, cfg.rho), np.ones(m),
                            epsilon=cfg.epsilon, max_iters=cfg.max_iters, polish=cfg.polish)
    lam = [tuned.lambda1, tuned.lambda2, tuned.lambda3]
    for k, override in enumerate((cfg.lambda1, cfg.lambda2, cfg.lambda3)):
        if override is not None:
            lam[k] = np.full(m, float(override))
    return dataclasses.replace(tuned, lambda1=lam[0], lambda2=lam[1], lambda3=lam[2])


@dataclass
class ChromosomeResult:
    chromosome: str
    signals: SignalMatrix
    fitted: SignalMatrix
    solution: GflSolution | None
    penalty: PenaltyConfig
    segmentation: Segmentation
    subjects: dict = field(default_factory=dict)
    calls: list = field(default_factory=list)
    seconds: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def converged(self):
        return self.solution is None or self.solution.converged


def _solve(normed: SignalMatrix, cfg: PipelineConfig):
    """Fit ``normed``: all rows jointly, or one block per subject."""
    if cfg.joint_subjects:
        lam = penalties(normed, cfg)
        return lam, solve_gfl(normed, lam)
    m = normed.n_sequences
    beta = np.zeros(normed.shape)
    lams = np.zeros((3, m))
    pieces = []
    for slot in group_subjects(normed.labels).values():
        rows = sorted(slot.values())
        sub = normed.subset(rows)
        lam = penalties(sub, cfg)
        sol = solve_gfl(sub, lam)
        beta[rows] = sol.beta
        lams[:, rows] = lam.lambda1, lam.lambda2, lam.lambda3
        pieces.append(sol)
    sol = GflSolution(
        beta,
        np.concatenate([s.objective_trace for s in pieces]),
        max(s.iterations for s in pieces),
        all(s.converged for s in pieces),
        max(s.stationarity_gap for s in pieces),
        float(sum(s.objective for s in pieces)),
    )
    return dataclasses.replace(lam, lambda1=lams[0], lambda2=lams[1], lambda3=lams[2]), sol


def segment_chromosome(signals: SignalMatrix, cfg: PipelineConfig) -> ChromosomeResult:
    """Fit and threshold one chromosome; no calling."""
    t0 = time.perf_counter()
    rows = fit_rows(signals, cfg)
    normed = normalize(rows, estimate_scales(rows, cfg.estimator))
    lam, sol = _solve(normed, cfg)
    notes = []
    if not (np.any(lam.lambda1) or np.any(lam.lambda2) or np.any(lam.lambda3)):
        notes.append("all penalties are zero: the fit reproduces the data")
        logger.warning(notes[-1])
        seg = _unpenalized_segments(sol, normed)
    else:
        seg = segment_solution(sol, normed, 1.0, cfg.threshold, cfg.rule)
    fitted = dataclasses.replace(normed, values=sol.beta * normed.scales[:, None],
                                 mask=np.ones_like(normed.mask), scales=np.ones(normed.n_sequences))
    if not sol.converged:
        notes.append("solver stopped before convergence")
    subjects = merge_subject_segments(seg, normed)
    return ChromosomeResult(signals.grid.chromosome, signals, fitted, sol, lam, seg, subjects,
                            seconds=time.perf_counter() - t0, warnings=notes)


def _unpenalized_segments(sol, normed):
    rows = []
    for i in range(normed.n_sequences):
        cps = np.flatnonzero(np.diff(sol.beta[i]) != 0) + 1
        rows.append(build_segmentation(sol.beta[i], cps, normed.values[i], normed.mask[i], normed.labels[i]))
    return Segmentation(normed.grid, rows, normed.scales.copy())


def merge_subject_segments(seg: Segmentation, fitted_rows: SignalMatrix) -> dict:
    """Subject -> change points merged over that subject's fitted rows."""
    out = {}
    for subject, slot in group_subjects(fitted_rows.labels).items():
        cps = np.zeros(0, int)
        for i in slot.values():
            cps = merge_changepoints(cps, seg.rows[i])
        out[subject] = cps
    return out


def call_chromosome(signals: SignalMatrix, subject_cps: dict, cfg: PipelineConfig):
    """Call every subject that has an LRR row, using the merged change points."""
    calls = []
    caller = cfg.caller()
    pos = signals.grid.positions
    for subject, slot in group_subjects(signals.labels).items():
        if "LRR" not in slot or subject not in subject_cps:
            continue
        i = slot["LRR"]
        lrr = np.where(signals.mask[i], signals.values[i], np.nan)
        if "BAF" in slot:
            k = slot["BAF"]
            baf = np.where(signals.mask[k], signals.values[k], np.nan)
        else:
            baf = np.full(signals.n_loci, np.nan)
        row = build_segmentation(lrr, subject_cps[subject], lrr, signals.mask[i], subject)
        calls.extend(call_segments(row, lrr, baf, caller, pos, signals.grid.chromosome))
    return calls


def run_chromosome(signals: SignalMatrix, cfg: PipelineConfig) -> ChromosomeResult:
    res = segment_chromosome(signals, cfg)
    t0 = time.perf_counter()
    res.calls = call_chromosome(signals, res.subjects, cfg)
    res.seconds += time.perf_counter() - t0
    return res


def run_pipeline(chromosomes, cfg: PipelineConfig, threads=1, calls=True):
    """Process every chromosome; results come back in input order.

    ``chromosomes`` is a mapping label -> SignalMatrix (as returned by
    :func:`gflcnv.signal.load_signals`) or a sequence of matrices.
    """
    mats = list(chromosomes.values()) if isinstance(chromosomes, dict) else list(chromosomes)
    work = run_chromosome if calls else segment_chromosome
    if threads <= 1 or len(mats) <= 1:
        return [work(sm, cfg) for sm in mats]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda sm: work(sm, cfg), mats))


def subject_rows(records, grid, labels):
    """Change points per subject rebuilt from segment-table records.

    ``records`` are dicts from :func:`gflcnv.segment.read_segments`
    restricted to one chromosome.
    """
    pos = np.asarray(grid.positions)
    by_seq: dict = {}
    for rec in records:
        by_seq.setdefault(rec["seq"], []).append(rec)
    out = {}
    for seq, recs in by_seq.items():
        starts = np.searchsorted(pos, [r["start_pos"] for r in recs])
        ends = np.searchsorted(pos, [r["end_pos"] for r in recs]) + 1
        if (np.any(starts >= pos.size) or np.any(pos[starts] != [r["start_pos"] for r in recs])
                or np.any(pos[ends - 1] != [r["end_pos"] for r in recs])):
            raise ValueError(f"segments of {seq} do not sit on the locus grid")
        order = np.argsort(starts)
        starts, ends = starts[order], ends[order]
        if starts[0] != 0 or ends[-1] != pos.size or np.any(starts[1:] != ends[:-1]):
            raise ValueError(f"segments of {seq} do not tile chromosome {grid.chromosome}")
        subject, _ = split_label(seq)
        out[subject] = np.union1d(out.get(subject, np.zeros(0, int)), starts[1:]).astype(int)
    return out

