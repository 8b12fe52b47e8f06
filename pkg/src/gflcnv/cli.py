"""Command-line front end: simulate, tune, segment, call, evaluate."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .caller import STATES, read_calls, write_calls
from .pipeline import (
    PipelineConfig,
    call_chromosome,
    fit_rows,
    group_subjects,
    penalties,
    run_pipeline,
    subject_rows,
)
from .segment import GridMismatchError, read_segments, write_segments
from .signal import SignalFormatError, SignalMatrix, load_signals, normalize, write_signals
from .simulate import (
    CnvSpec,
    evaluate_het,
    evaluate_per_snp,
    mix_contamination,
    paint_calls,
    read_truth,
    simulate_normal,
    simulate_tumor_pair,
    TUMOR_LAYOUT_LOCI,
    tumor_layout,
    write_truth,
)
from .tuning import estimate_scales, predict_bias

logger = logging.getLogger("gflcnv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class Outputs:
    """Collects output files in a scratch directory and moves them into
    place only when the command finishes, so a failed run leaves nothing
    behind."""

    def __init__(self, target):
        self.target = Path(target)
        self._tmp = None
        self.names = []

    def __enter__(self):
        self._tmp = Path(tempfile.mkdtemp(prefix="gflcnv-"))
        return self

    def path(self, name):
        self.names.append(name)
        return self._tmp / name

    def commit(self):
        self.target.mkdir(parents=True, exist_ok=True)
        for name in self.names:
            shutil.move(str(self._tmp / name), str(self.target / name))
        return [str(self.target / n) for n in self.names]

    def __exit__(self, *exc):
        shutil.rmtree(self._tmp, ignore_errors=True)
        return False


def read_config(path):
    """Flat ``key = value`` file, or the config section of a run manifest."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix == ".json":
        return dict(json.loads(text).get("config", {}))
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}") from None
    return dict(parser["run"])


def build_config(args) -> PipelineConfig:
    data = read_config(args.config) if args.config else {}
    for key in ("c1", "c2", "c3", "p", "rho", "estimator", "lambda1", "lambda2", "lambda3", "threshold",
                "r1", "r2", "r2_loss", "r2_gain", "pA", "pB", "mode", "baseline_window"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "normal_fractions", None):
        data["normal_fractions"] = args.normal_fractions
    try:
        return PipelineConfig.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def manifest(args, cfg, inputs, outputs, **extra):
    out = {
        "command": args.command,
        "software": {"name": "gflcnv", "version": __version__},
        "seed": args.seed,
        "threads": args.threads,
        "inputs": [str(p) for p in inputs],
        "config": cfg.as_dict() if cfg is not None else {},
        "outputs": outputs,
    }
    out.update(extra)
    return out


def _write_json(path, data):
    with Path(path).open("w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    raise TypeError(type(obj).__name__)


def _load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input {path} not found")
    return load_signals(path)


# --------------------------------------------------------------------- simulate


def _parse_cnv(text):
    try:
        start, length, kind = text.split(":")
        return CnvSpec(int(start), int(length), kind)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad CNV {text!r} (want START:LENGTH:TYPE): {exc}") from None


def _simulate_chromosome(args, chrom, key):
    """Samples of one chromosome plus (label, fraction) rows."""
    if args.design == "normal":
        n = args.n_loci or 13000
        cnvs = args.cnv or [CnvSpec(n // 2 - 5, 10, "loss1")]
        samples = [simulate_normal(n, cnvs, args.noise_sigma, args.seed, label=f"S{k + 1}", chrom=chrom,
                                   stream_key=key * 1000 + k) for k in range(args.subjects)]
        return samples, [(s.label, "") for s in samples], n, cnvs
    n = args.n_loci or TUMOR_LAYOUT_LOCI
    cnvs = args.cnv or tumor_layout()
    tumor, normal = simulate_tumor_pair(n, cnvs, args.noise_sigma, args.seed, label="T", chrom=chrom,
                                        stream_key=key)
    fractions = [0.0] if args.design == "tumor" else np.round(np.linspace(0, 1, args.steps), 10)
    samples, rows = [], []
    for w in fractions:
        mixed = mix_contamination(tumor.signals, normal.signals, float(w))
        label = f"T_w{round(100 * w):03d}"
        mixed.labels = [f"{label}.LRR", f"{label}.BAF"]
        samples.append(type(tumor)(mixed, tumor.states, tumor.genotype, tumor.cnvs, label))
        rows.append((label, f"{w:.2f}"))
    return samples, rows, n, cnvs


def cmd_simulate(args):
    if args.chromosomes < 1:
        raise UsageError("--chromosomes must be >= 1")
    with Outputs(args.output_dir) as out:
        mats, genos, all_samples = [], [], []
        for key in range(args.chromosomes):
            samples, sample_rows, n, cnvs = _simulate_chromosome(args, str(key + 1), key)
            grid = samples[0].signals.grid
            mats.append(SignalMatrix(grid, np.vstack([s.signals.values for s in samples]),
                                     np.vstack([s.signals.mask for s in samples]),
                                     sum((s.signals.labels for s in samples), []),
                                     sum((s.signals.kinds for s in samples), [])))
            genos.append(SignalMatrix(grid, np.vstack([s.genotype for s in samples]),
                                      np.ones((len(samples), n), bool), [s.label for s in samples]))
            all_samples.extend(samples)
        write_signals(out.path("signals.tsv"), mats)
        write_signals(out.path("genotypes.tsv"), genos)
        write_truth(out.path("truth.tsv"), all_samples)
        with out.path("samples.tsv").open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["subject", "fraction"])
            w.writerows(sample_rows)
        names = list(out.names)
        paths = [str(Path(args.output_dir) / nm) for nm in names + ["manifest.json"]]
        _write_json(out.path("manifest.json"), manifest(
            args, None, [], paths, design=args.design, n_loci=n, chromosomes=args.chromosomes,
            noise_sigma=args.noise_sigma,
            cnvs=[{"start": c.start, "length": c.length, "type": c.type} for c in cnvs]))
        out.commit()
    return EXIT_OK


# ------------------------------------------------------------------------ tune


def cmd_tune(args):
    cfg = build_config(args)
    chroms = _load(args.signals)
    report = []
    for chrom, sm in chroms.items():
        rows = fit_rows(sm, cfg)
        scales = estimate_scales(rows, cfg.estimator)
        lam = penalties(normalize(rows, scales), cfg)
        bias = predict_bias(lam, args.length, args.sharers)
        for i, label in enumerate(rows.labels):
            s = float(scales.sigmas[i])
            report.append({
                "chrom": chrom, "seq": label, "sigma": s,
                "lambda1": float(lam.lambda1[i]), "lambda2": float(lam.lambda2[i]), "lambda3": float(lam.lambda3[i]),
                "bias1": float(bias.bias1[i]) * s, "bias2": float(bias.bias2[i]) * s, "bias3": float(bias.bias3[i]) * s,
            })
    cols = ["chrom", "seq", "sigma", "lambda1", "lambda2", "lambda3", "bias1", "bias2", "bias3"]
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(cols)
    for rec in report:
        w.writerow([rec[c] if isinstance(rec[c], str) else f"{rec[c]:.6g}" for c in cols])
    return EXIT_OK


# --------------------------------------------------------------------- segment


def cmd_segment(args):
    cfg = build_config(args)
    chroms = _load(args.signals)
    results = run_pipeline(chroms, cfg, threads=args.threads, calls=args.call)
    converged = all(r.converged for r in results)
    with Outputs(args.output_dir) as out:
        write_segments(out.path("segments.tsv"), [r.segmentation for r in results])
        _write_fits(out.path("fit.tsv"), results)
        if args.call:
            write_calls(out.path("calls.tsv"), [c for r in results for c in r.calls])
        _finish(args, out, cfg, [args.signals], results, converged)
    if not converged:
        logger.error("solver did not converge on %s; outputs are flagged partial",
                     [r.chromosome for r in results if not r.converged])
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _write_fits(path, results):
    """Fitted means in signal units; one file with every chromosome."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["chrom", "pos", *results[0].fitted.labels])
        for r in results:
            for j, pos in enumerate(r.fitted.grid.positions):
                w.writerow([r.chromosome, int(pos), *(f"{v:.10g}" for v in r.fitted.values[:, j])])


def _finish(args, out, cfg, inputs, results, converged, **extra):
    paths = [str(Path(args.output_dir) / n) for n in out.names + ["manifest.json"]]
    counts = {str(s): 0 for s in STATES}
    for r in results:
        for c in r.calls:
            counts[str(c.state)] += 1
    chromosomes = [{
        "chrom": r.chromosome, "seconds": round(r.seconds, 3), "n_loci": int(r.signals.n_loci),
        "converged": bool(r.converged), "iterations": int(r.solution.iterations) if r.solution else 0,
        "warnings": r.warnings,
    } for r in results]
    _write_json(out.path("manifest.json"), manifest(
        args, cfg, inputs, paths, chromosomes=chromosomes, converged=converged, partial=not converged,
        call_counts=counts if any(r.calls for r in results) else {}, **extra))
    out.commit()


# ------------------------------------------------------------------------ call


class _CallResult:
    """Just enough of a chromosome result for :func:`_finish`."""

    def __init__(self, chrom, signals, calls, seconds):
        self.chromosome, self.signals, self.calls, self.seconds = chrom, signals, calls, seconds
        self.solution, self.warnings, self.converged = None, [], True


def cmd_call(args):
    cfg = build_config(args)
    chroms = _load(args.signals)
    if not Path(args.segments).exists():
        raise FileNotFoundError(f"input {args.segments} not found")
    records = read_segments(args.segments)
    by_chrom: dict = {}
    for rec in records:
        by_chrom.setdefault(rec["chrom"], []).append(rec)
    unknown = sorted(set(by_chrom) - set(chroms))
    if unknown:
        raise GridMismatchError(f"segments on chromosomes missing from the signals: {unknown}")
    results = []
    for chrom, sm in chroms.items():
        t0 = time.perf_counter()
        cps = subject_rows(by_chrom.get(chrom, []), sm.grid, sm.labels)
        missing = [s for s, slot in group_subjects(sm.labels).items() if "LRR" in slot and s not in cps]
        if missing:
            raise GridMismatchError(f"no segments for {missing} on chromosome {chrom}")
        calls = call_chromosome(sm, cps, cfg)
        results.append(_CallResult(chrom, sm, calls, time.perf_counter() - t0))
    with Outputs(args.output_dir) as out:
        write_calls(out.path("calls.tsv"), [c for r in results for c in r.calls])
        _finish(args, out, cfg, [args.signals, args.segments], results, True)
    return EXIT_OK


# -------------------------------------------------------------------- evaluate


def _read_samples(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return {r["subject"]: (float(r["fraction"]) if r["fraction"] else None) for r in reader}


def cmd_evaluate(args):
    for p in (args.truth, args.calls, args.genotypes):
        if not Path(p).exists():
            raise FileNotFoundError(f"input {p} not found")
    truth, calls = read_truth(args.truth), read_calls(args.calls)
    genotypes = load_signals(args.genotypes)
    fractions = _read_samples(args.samples) if args.samples else {}
    subjects = list(dict.fromkeys(lab for sm in genotypes.values() for lab in sm.labels))
    rows = []
    pooled = {"tp": 0, "fp": 0, "true": 0, "called": 0}
    for subject in subjects:
        t_states, c_states, het, regions = [], [], [], []
        offset = 0
        for chrom, sm in genotypes.items():
            pos = sm.grid.positions
            i = sm.labels.index(subject)
            t = paint_calls(pos, [r for r in truth if r["seq"] == subject and r["chrom"] == chrom])
            c = paint_calls(pos, [r for r in calls if r["seq"] == subject and r["chrom"] == chrom])
            for r in truth:
                if r["seq"] == subject and r["chrom"] == chrom:
                    lo = int(np.searchsorted(pos, r["start"]))
                    hi = int(np.searchsorted(pos, r["end"], side="right"))
                    regions.append((offset + lo, offset + hi))
            t_states.append(t)
            c_states.append(c)
            het.append(sm.values[i] == 1)
            offset += pos.size
        t_states, c_states, het = map(np.concatenate, (t_states, c_states, het))
        snp = evaluate_per_snp(t_states, c_states)
        hz = evaluate_het(t_states, c_states, het, regions)
        for k in pooled:
            pooled[k] += snp.counts[k]
        rows.append({"subject": subject, "fraction": fractions.get(subject), "tpr": snp.tpr, "fdr": snp.fdr,
                     "sensitivity": hz.sensitivity, "specificity": hz.specificity,
                     "counts": {**snp.counts, **hz.counts}, "per_region": hz.per_region})
    report = {
        "pooled": {
            "tpr": pooled["tp"] / pooled["true"] if pooled["true"] else None,
            "fdr": pooled["fp"] / pooled["called"] if pooled["called"] else 0.0,
            "counts": pooled,
        },
        "subjects": rows,
    }
    with Outputs(args.output_dir) as out:
        with out.path("report.json").open("w") as fh:
            json.dump(_nan_to_none(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with out.path("sensitivity.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "fraction", "sensitivity", "specificity", "tpr", "fdr"])
            order = sorted(rows, key=lambda r: (r["fraction"] is None, r["fraction"] or 0.0, r["subject"]))
            for r in order:
                w.writerow([r["subject"], "" if r["fraction"] is None else f"{r['fraction']:.2f}",
                            *(_fmt(r[k]) for k in ("sensitivity", "specificity", "tpr", "fdr"))])
        _finish(args, out, None, [args.truth, args.calls, args.genotypes], [], True)
    return EXIT_OK


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj


# ---------------------------------------------------------------------- parser


def _add_model_flags(p):
    g = p.add_argument_group("penalties")
    for key in ("c1", "c2", "c3", "p", "rho", "lambda1", "lambda2", "lambda3"):
        g.add_argument(f"--{key}", type=float)
    g.add_argument("--estimator", choices=("SD", "MAD"))
    g.add_argument("--threshold", choices=("ruler", "mbic"))
    c = p.add_argument_group("calling")
    for key in ("r1", "r2", "r2-loss", "r2-gain", "pA", "pB"):
        c.add_argument(f"--{key}", type=float, dest=key.replace("-", "_"))
    c.add_argument("--mode", choices=("mixture", "max"))
    c.add_argument("--baseline-window", type=int)
    c.add_argument("--normal-fractions", type=float, nargs="+",
                   help="enable the contamination-aware BAF model on this grid of fractions")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file (or a run manifest) with pipeline settings")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--output-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gflcnv", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset and its truth")
    p.add_argument("--design", choices=("normal", "tumor", "sweep"), default="normal")
    p.add_argument("--n-loci", type=int)
    p.add_argument("--cnv", type=_parse_cnv, action="append", help="START:LENGTH:TYPE, 0-based start")
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--chromosomes", type=int, default=1, help="chromosomes with the same layout")
    p.add_argument("--noise-sigma", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=21, help="dilution points for --design sweep")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", parents=[common], help="print penalties and predicted biases")
    p.add_argument("signals")
    p.add_argument("--length", type=int, default=10, help="segment length for the bias prediction")
    p.add_argument("--sharers", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("segment", parents=[common], help="fit and segment every chromosome")
    p.add_argument("signals")
    p.add_argument("--call", action="store_true", help="also call copy numbers")
    _add_model_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("call", parents=[common], help="call copy numbers on a segment table")
    p.add_argument("signals")
    p.add_argument("segments")
    _add_model_flags(p)
    p.set_defaults(func=cmd_call)

    p = sub.add_parser("evaluate", parents=[common], help="score calls against simulated truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--calls", required=True)
    p.add_argument("--genotypes", required=True, help="genotype table written by simulate (locus grid and het SNPs)")
    p.add_argument("--samples", help="subject/fraction table written by simulate")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gflcnv: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SignalFormatError, GridMismatchError, ValueError) as exc:
        print(f"gflcnv: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
