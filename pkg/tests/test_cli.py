import csv
import json
import math

import numpy as np
import pytest

from gflcnv.cli import main
from gflcnv.pipeline import PipelineConfig, run_chromosome, run_pipeline, split_label
from gflcnv.signal import load_signals, write_signals
from gflcnv.simulate import CnvSpec, simulate_normal


def run(*argv):
    return main([str(a) for a in argv])


def rows(path, delimiter="\t"):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter=delimiter))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--output-dir", d, "--seed", 4, "--chromosomes", 2, "--n-loci", 3000,
               "--cnv", "1400:40:loss1") == 0
    return d


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--output-dir", tmp_path / name, "--seed", 7, "--subjects", 2, "--n-loci", 500) == 0
    for f in ("signals.tsv", "genotypes.tsv", "truth.tsv", "samples.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["command"] == "simulate"


def test_segment_smoke(tmp_path):
    assert run("simulate", "--output-dir", tmp_path, "--seed", 1) == 0
    assert run("segment", tmp_path / "signals.tsv", "--output-dir", tmp_path / "seg") == 0
    segs = rows(tmp_path / "seg" / "segments.tsv")
    labels = {r["seq"] for r in segs}
    assert labels == {"S1.LRR", "S1.mBAF"}
    man = json.loads((tmp_path / "seg" / "manifest.json").read_text())
    assert man["chromosomes"][0]["seconds"] > 0 and man["converged"] is True
    assert man["chromosomes"][0]["n_loci"] == 13000


def test_zero_penalties_give_one_segment_per_locus(tmp_path):
    assert run("simulate", "--output-dir", tmp_path, "--n-loci", 60, "--cnv", "20:5:gain2") == 0
    assert run("segment", tmp_path / "signals.tsv", "--output-dir", tmp_path / "seg",
               "--lambda1", 0, "--lambda2", 0, "--lambda3", 0) == 0
    segs = rows(tmp_path / "seg" / "segments.tsv")
    assert sum(r["seq"] == "S1.LRR" for r in segs) == 60
    man = json.loads((tmp_path / "seg" / "manifest.json").read_text())
    assert any("zero" in w for w in man["chromosomes"][0]["warnings"])
    sig = load_signals(tmp_path / "signals.tsv")["1"]
    fit = rows(tmp_path / "seg" / "fit.tsv")
    np.testing.assert_allclose([float(r["S1.LRR"]) for r in fit], sig.values[0], rtol=1e-8, atol=1e-8)


def test_missing_input_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    assert run("segment", tmp_path / "nope.tsv", "--output-dir", out) == 3
    assert not out.exists() or not any(out.iterdir())
    assert run("evaluate", "--truth", tmp_path / "t", "--calls", tmp_path / "c", "--genotypes", tmp_path / "g",
               "--output-dir", out) == 3
    assert not out.exists() or not any(out.iterdir())


def test_deletion_is_called_state_one(dataset, tmp_path):
    assert run("segment", dataset / "signals.tsv", "--output-dir", tmp_path / "seg") == 0
    assert run("call", dataset / "signals.tsv", tmp_path / "seg" / "segments.tsv", "--output-dir", tmp_path / "c") == 0
    calls = rows(tmp_path / "c" / "calls.tsv")
    truth = rows(dataset / "truth.tsv")
    for t in truth:
        hit = [c for c in calls if c["chrom"] == t["chrom"] and int(c["start"]) <= int(t["end"])
               and int(c["end"]) >= int(t["start"]) and c["state"] != "2"]
        assert hit and all(c["state"] == "1" for c in hit)
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["call_counts"]["1"] >= 2


def test_evaluate_perfect_calls(dataset, tmp_path):
    calls = tmp_path / "calls.tsv"
    with open(calls, "w") as fh:
        fh.write("seq\tchrom\tstart\tend\tn_loci\tstate\tLR0\tLR1\tLR3\tLR4\tlrr_mean\tpassed_r1\tpassed_r2\n")
        for t in rows(dataset / "truth.tsv"):
            fh.write(f"{t['seq']}\t{t['chrom']}\t{t['start']}\t{t['end']}\t40\t{t['state']}\t0\t0\t0\t0\t0\t1\t1\n")
    assert run("evaluate", "--truth", dataset / "truth.tsv", "--calls", calls, "--genotypes",
               dataset / "genotypes.tsv", "--output-dir", tmp_path / "ev") == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert rep["pooled"]["tpr"] == 1.0 and rep["pooled"]["fdr"] == 0.0


def test_infinite_r1_blocks_all_calls(dataset, tmp_path):
    assert run("segment", dataset / "signals.tsv", "--call", "--r1", "inf", "--output-dir", tmp_path) == 0
    assert all(r["state"] == "2" for r in rows(tmp_path / "calls.tsv"))


def test_normal_input_rarely_gives_calls():
    clean = 0
    for r in range(40):
        smp = simulate_normal(4000, [], seed=21, stream_key=r)
        clean += not any(c.state != 2 for c in run_chromosome(smp.signals, PipelineConfig()).calls)
    assert clean >= 38


def test_sweep_gives_21_rows(tmp_path):
    assert run("simulate", "--design", "sweep", "--output-dir", tmp_path, "--seed", 2) == 0
    assert run("segment", tmp_path / "signals.tsv", "--call", "--output-dir", tmp_path / "seg") == 0
    assert run("evaluate", "--truth", tmp_path / "truth.tsv", "--calls", tmp_path / "seg" / "calls.tsv",
               "--genotypes", tmp_path / "genotypes.tsv", "--samples", tmp_path / "samples.tsv",
               "--output-dir", tmp_path / "ev") == 0
    out = rows(tmp_path / "ev" / "sensitivity.csv", ",")
    assert len(out) == 21
    assert [r["fraction"] for r in out] == [f"{w:.2f}" for w in np.linspace(0, 1, 21)]
    assert float(out[0]["specificity"]) >= 0.995


def test_chromosomes_are_independent(dataset, tmp_path):
    both = load_signals(dataset / "signals.tsv")
    assert run("segment", dataset / "signals.tsv", "--output-dir", tmp_path / "all") == 0
    joint = rows(tmp_path / "all" / "segments.tsv")
    for chrom, sm in both.items():
        write_signals(tmp_path / f"c{chrom}.tsv", [sm])
        assert run("segment", tmp_path / f"c{chrom}.tsv", "--output-dir", tmp_path / f"o{chrom}") == 0
        alone = rows(tmp_path / f"o{chrom}" / "segments.tsv")
        assert alone == [r for r in joint if r["chrom"] == chrom]


def test_threads_do_not_change_outputs(dataset, tmp_path):
    for t in (1, 3):
        assert run("segment", dataset / "signals.tsv", "--call", "--threads", t, "--output-dir", tmp_path / str(t)) == 0
    for f in ("segments.tsv", "fit.tsv", "calls.tsv"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "3" / f).read_bytes()


def test_config_file_and_manifest_replay(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("c2 = 3\nr1 = 12\nuse_mbaf = no\n")
    assert run("segment", dataset / "signals.tsv", "--config", cfg, "--output-dir", tmp_path / "a") == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["c2"] == 3.0 and man["config"]["use_mbaf"] is False
    assert {r["seq"] for r in rows(tmp_path / "a" / "segments.tsv")} == {"S1.LRR"}
    assert run("segment", dataset / "signals.tsv", "--config", tmp_path / "a" / "manifest.json",
               "--output-dir", tmp_path / "b") == 0
    assert (tmp_path / "a" / "segments.tsv").read_bytes() == (tmp_path / "b" / "segments.tsv").read_bytes()


def test_exit_codes(dataset, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("frobnicate = 1\n")
    assert run("segment", dataset / "signals.tsv", "--config", bad, "--output-dir", tmp_path / "x") == 2
    with pytest.raises(SystemExit) as exc:
        run("segment")
    assert exc.value.code == 2
    slow = tmp_path / "slow.cfg"
    slow.write_text("max_iters = 2\n")
    assert run("segment", dataset / "signals.tsv", "--config", slow, "--output-dir", tmp_path / "p") == 4
    man = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert man["partial"] is True
    garbage = tmp_path / "g.tsv"
    garbage.write_text("chrom\tpos\tx.LRR\n1\tabc\t0.1\n")
    assert run("segment", garbage, "--output-dir", tmp_path / "g") == 3


def test_tune_prints_penalties(dataset, capsys):
    assert run("tune", dataset / "signals.tsv", "--p", 0, "--length", 20) == 0
    out = list(csv.DictReader(capsys.readouterr().out.splitlines(), delimiter="\t"))
    lrr = [r for r in out if r["seq"] == "S1.LRR"]
    assert len(lrr) == 2
    n = 3000
    sigma = float(lrr[0]["sigma"])
    assert float(lrr[0]["lambda2"]) == pytest.approx(2 * math.sqrt(math.log(n)), rel=1e-5)
    assert float(lrr[0]["bias2"]) == pytest.approx(float(lrr[0]["lambda2"]) / 20 * sigma, rel=1e-4)
    assert float(lrr[0]["lambda3"]) == 0.0


def test_label_suffixes():
    assert split_label("A.LRR") == ("A", "LRR")
    assert split_label("A_B_mBAF") == ("A_B", "mBAF")


def test_run_pipeline_keeps_order():
    chroms = {str(k): simulate_normal(800, CnvSpec(300, 30, "gain2"), seed=1, chrom=str(k), stream_key=k).signals
              for k in range(3)}
    res = run_pipeline(chroms, PipelineConfig(), threads=2)
    assert [r.chromosome for r in res] == ["0", "1", "2"]
    assert all(any(c.state == 4 for c in r.calls) for r in res)
