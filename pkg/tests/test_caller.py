import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.stats import norm

from gflcnv.caller import (
    CallerConfig,
    baf_likelihood,
    baf_loglik,
    call_segment,
    call_segments,
    estimate_sigma_x,
    lrr_loglik,
    read_calls,
    write_calls,
)
from gflcnv.segment import build_segmentation
from gflcnv.simulate import CnvSpec, simulate_normal

MIX = CallerConfig(pA=0.5, pB=0.5, sigma_x=0.03)


def test_het_dominates_at_half():
    got = baf_likelihood(0.5, 2, MIX)
    assert got == pytest.approx(0.5 * norm.pdf(0.5, 0.5, 0.03), rel=1e-12)
    tails = 0.25 * 2 * norm.pdf(0.5, 0, 0.03) + 0.25 * 2 * norm.pdf(0.5, 1, 0.03)
    assert tails < 1e-40


def test_single_copy_has_nothing_at_half():
    assert baf_likelihood(0.5, 1, MIX) < 1e-55


def test_no_copies_is_flat_and_symmetric():
    x = np.linspace(0, 1, 11)
    v = baf_likelihood(x, 0, MIX)
    np.testing.assert_allclose(v, norm.pdf(x, 0.5, 0.3))
    np.testing.assert_allclose(v, v[::-1])


def test_half_normal_is_inward_only():
    cfg = CallerConfig(sigma_x=0.03, mode="max")
    assert baf_likelihood(0.0, 1, cfg) == pytest.approx(2 * norm.pdf(0, 0, 0.03))


def test_baf_errors():
    with pytest.raises(ValueError):
        baf_likelihood(0.5, 5, MIX)
    with pytest.raises(ValueError):
        CallerConfig(mode="mixture")
    with pytest.raises(ValueError):
        baf_likelihood(1.2, 2, MIX)


def test_max_mode_is_default_without_allele_frequencies():
    assert CallerConfig().mode == "max"
    assert CallerConfig(pA=0.3).pB == pytest.approx(0.7)


@pytest.mark.parametrize("kw", [{"r1": 0}, {"r2": -1}, {"sigma_x": 0}, {"pA": 0.3, "pB": 0.3}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CallerConfig(**kw)


def test_lrr_log_ratio_matches_closed_form():
    z = np.random.default_rng(0).normal(size=50)
    y = -0.5 + 0.2 * (z - z.mean()) / z.std()
    ratio = lrr_loglik(y, 1, 0.0, 0.2) - lrr_loglik(y, 2, 0.0, 0.2)
    assert ratio == pytest.approx(50 * 0.5**2 / (2 * 0.2**2), rel=1e-12)
    assert ratio == pytest.approx(156.25)


def test_single_point_segment_uses_baseline_sd():
    assert lrr_loglik([0.3], 1, 0.0, 0.2) == pytest.approx(norm.logpdf(0.3, 0.3, 0.2))
    with pytest.raises(ValueError):
        lrr_loglik([], 1, 0.0, 0.2)


def test_baseline_ratio_is_zero():
    y = np.random.default_rng(1).normal(0, 0.2, 40)
    assert lrr_loglik(y, 2, 0, 0.2) - lrr_loglik(y, 2, 0, 0.2) == 0.0


def test_hemizygous_deletion():
    rng = np.random.default_rng(4)
    y = rng.normal(-0.5, 0.2, 50)
    x = np.where(rng.random(50) < 0.5, np.abs(rng.normal(0, 0.01, 50)), 1 - np.abs(rng.normal(0, 0.01, 50)))
    call = call_segment(x, y, MIX, mu2=0.0, sigma2=0.2)
    assert call.state == 1 and call.passed_r1 and call.passed_r2


def test_small_mean_fails_gate():
    y = np.full(200, 0.05) + np.random.default_rng(2).normal(0, 0.01, 200)
    y += 0.05 - y.mean()
    call = call_segment([], y, MIX, mu2=0.0, sigma2=0.2)
    assert call.lr[call.best_state] > 10
    assert not call.passed_r2 and call.state == 2


def test_gate_overrides():
    cfg = CallerConfig(r2=1.0, r2_loss=1.5)
    assert cfg.r2_for(1) == 1.5 and cfg.r2_for(3) == 1.0
    y = np.full(60, -0.25) + np.random.default_rng(0).normal(0, 0.05, 60)
    assert call_segment([], y, CallerConfig(r2=1.0), mu2=0, sigma2=0.2).state != 2
    assert call_segment([], y, cfg, mu2=0, sigma2=0.2).state == 2


def test_call_segment_needs_data():
    with pytest.raises(ValueError):
        call_segment([0.5], [np.nan], MIX, mu2=0, sigma2=0.2)
    with pytest.raises(ValueError):
        call_segment([0.5], [0.1], MIX)


segment_data = st.integers(0, 2**31 - 1).map(np.random.default_rng).map(
    lambda r: (r.uniform(0, 1, r.integers(1, 30)), r.normal(r.uniform(-1, 1), 0.2, r.integers(1, 30)))
)


@settings(max_examples=60, deadline=None)
@given(segment_data, st.floats(0.05, 0.95))
def test_allele_exchange_symmetry(data, pa):
    x, y = data
    a = call_segment(x, y, CallerConfig(pA=pa, sigma_x=0.03), mu2=0, sigma2=0.2)
    b = call_segment(1 - x, y, CallerConfig(pA=1 - pa, sigma_x=0.03), mu2=0, sigma2=0.2)
    for c in a.lr:
        assert a.lr[c] == pytest.approx(b.lr[c], rel=1e-9, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(segment_data, st.floats(0.1, 100))
def test_gate_is_absolute(data, r1):
    x, y = data
    call = call_segment(x, y, CallerConfig(r1=r1), mu2=0, sigma2=0.2)
    if call.lr[call.best_state] <= r1:
        assert call.state == 2
    if call.state != 2:
        assert call.passed_r1 and call.passed_r2
    assert call_segment(x, y, CallerConfig(r1=math.inf), mu2=0, sigma2=0.2).state == 2


@given(st.floats(0.01, 0.99))
def test_mixture_weights_sum_to_one(pa):
    from scipy.special import comb

    for c in range(1, 5):
        s = np.arange(c + 1)
        assert np.sum(comb(c, s) * pa ** (c - s) * (1 - pa) ** s) == pytest.approx(1.0)
    # a density in x: integrates to ~1 on [0, 1] for interior-dominated states
    x = np.linspace(0, 1, 20001)
    for c in range(1, 5):
        assert trapezoid(baf_likelihood(x, c, CallerConfig(pA=pa, sigma_x=0.03)), x) == pytest.approx(1.0, abs=1e-3)


def test_sigma_x_estimate():
    rng = np.random.default_rng(0)
    assert estimate_sigma_x(rng.normal(0.5, 0.03, 5000)) == pytest.approx(0.03, rel=0.05)
    assert estimate_sigma_x(np.r_[np.zeros(100), 0.5 * np.ones(5)]) == 0.03


def test_generating_state_recovered():
    # the simulator draws genotypes with B-allele frequency 0.5
    cfg = CallerConfig(pA=0.5, pB=0.5)
    hits = total = 0
    kinds = ["loss2", "loss1", "gain1", "gain2"]
    for r in range(200):
        size = 30 + r % 31
        smp = simulate_normal(2000, CnvSpec(985, size, kinds[r % 4]), seed=5, stream_key=r)
        seg = build_segmentation(np.zeros(2000), [985, 985 + size])
        calls = call_segments(seg, smp.lrr, smp.baf, cfg, smp.signals.grid.positions, "1")
        hits += calls[1].state == smp.cnvs[0].state
        total += 1
    assert hits / total >= 0.95


def test_contamination_aware_model():
    rng = np.random.default_rng(7)
    w = 0.6
    het = rng.random(200) < 0.5
    x = np.where(het, np.where(rng.random(200) < 0.5, w / 2, 1 - w / 2) + rng.normal(0, 0.03, 200),
                 np.where(rng.random(200) < 0.5, 0.0, 1.0) + np.abs(rng.normal(0, 0.01, 200)) * np.where(rng.random(200) < 0.5, 1, -1))
    x = np.clip(x, 0, 1)
    y = rng.normal(-0.66 * (1 - w), 0.2, 200)
    plain = call_segment(x, y, CallerConfig(), mu2=0, sigma2=0.2)
    aware = call_segment(x, y, CallerConfig(normal_fractions=np.arange(0, 0.96, 0.05)), mu2=0, sigma2=0.2)
    assert plain.state != 1
    assert aware.state == 1
    assert aware.extra["normal_fraction"] == pytest.approx(w, abs=0.051)
    with pytest.raises(ValueError):
        CallerConfig(normal_fractions=[1.0])
    # at w = 0 the germline model gives the same answer as the plain table in max mode
    a = baf_loglik(x, 1, CallerConfig(), 0.03, normal_fraction=0.0)
    b = baf_loglik(x, 1, CallerConfig(), 0.03)
    np.testing.assert_allclose(a, b)


def test_call_table_round_trip(tmp_path):
    smp = simulate_normal(500, CnvSpec(200, 50, "loss1"), seed=1)
    seg = build_segmentation(np.zeros(500), [200, 250])
    seg.label = "s1"
    calls = call_segments(seg, smp.lrr, smp.baf, CallerConfig(), smp.signals.grid.positions, "1")
    write_calls(tmp_path / "c.tsv", calls)
    back = read_calls(tmp_path / "c.tsv")
    assert [r["state"] for r in back] == [c.state for c in calls]
    assert back[1]["state"] == 1 and back[1]["n_loci"] == 50


def test_exact_ties_follow_lrr_sign():
    x = np.array([0.0, 0.01, 0.99, 1.0])
    up = call_segment(x, [0.5, 0.6, 0.4, 0.55], CallerConfig(), mu2=0.0, sigma2=0.2)
    down = call_segment(x, [-0.5, -0.6, -0.4, -0.55], CallerConfig(), mu2=0.0, sigma2=0.2)
    assert up.lr[1] == up.lr[3] == up.lr[4]
    assert up.best_state == 3 and down.best_state == 1
