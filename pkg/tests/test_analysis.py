import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ref_corollary, ref_counts, ref_fhat, ref_miscov, ref_theorem1, ref_theorem2

from robust_ocp.analysis import (
    PATHWISE,
    CorruptionCounts,
    TraceAccumulator,
    aggregate,
    compensation_residual,
    corollary_rhs,
    corruption_counts,
    evaluate_bounds,
    f_hat,
    kt_deviation_bound,
    miscoverage,
    theorem1_rhs,
    theorem2_rhs,
    theorem3_rhs,
)
from robust_ocp.calibrators import TrainingSchedule, run_calibrator
from robust_ocp.core import CalibrationConfig, InvalidArgumentError, RunTrace, ScoreStream
from robust_ocp.corruption import Channel, ChannelSpec
from robust_ocp.predictors import PredictorState, default_w_bound


def make_trace(e, z=None, in_range=None, alpha=0.1, eta=0.1, B=1.0, training=None, q=None, algorithm="ocp"):
    T = len(e)
    e = np.asarray(e, dtype=np.int8)
    z = np.zeros(T, dtype=np.int8) if z is None else np.asarray(z, dtype=np.int8)
    inr = np.ones(T, dtype=np.int8) if in_range is None else np.asarray(in_range, dtype=np.int8)
    tr = np.zeros(T, dtype=np.int8) if training is None else np.asarray(training, dtype=np.int8)
    cfg = CalibrationConfig(alpha=alpha, eta=eta, score_bound=B, horizon=T)
    return RunTrace(cfg, np.full(T, 0.5), np.full(T, 0.5), e, e ^ z, z, np.ones(T), inr, tr, 0.5, q=q,
                    algorithm=algorithm)


def counts(**kw):
    base = dict(G_total=0, G_0to1=0, G_1to0=0, G_in_0to1=0, G_in_1to0=0)
    base.update(kw)
    return CorruptionCounts(**base)


def test_miscoverage_examples():
    assert miscoverage(make_trace([1] + [0] * 9)) == pytest.approx(0)
    assert miscoverage(make_trace([0] * 10)) == pytest.approx(0.1)
    assert miscoverage(make_trace([1, 0, 1, 0], alpha=0.5)) == 0


def test_miscoverage_empty():
    tr = make_trace([0])
    empty = RunTrace(tr.config, *(np.zeros(0) for _ in range(8)), 0.0)
    with pytest.raises(InvalidArgumentError):
        miscoverage(empty)


def test_counts_examples():
    assert corruption_counts(make_trace([0, 1, 0])) == counts()
    c = corruption_counts(make_trace([0, 1, 0], z=[1, 1, 0]))
    assert (c.G_0to1, c.G_1to0, c.G_total) == (1, 1, 2)
    c = corruption_counts(make_trace([0, 1, 0], z=[1, 1, 1], in_range=[0, 0, 0]))
    assert c.G_in_0to1 == c.G_in_1to0 == 0 and c.G_total == 3


@given(e=st.lists(st.integers(0, 1), min_size=1, max_size=50), data=st.data())
def test_counts_match_reference(e, data):
    n = len(e)
    z = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    inr = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    c = corruption_counts(make_trace(e, z, inr))
    assert c.__dict__ == ref_counts(e, z, inr)
    assert c.G_total == c.G_0to1 + c.G_1to0
    assert c.G_in_0to1 <= c.G_0to1 and c.G_in_1to0 <= c.G_1to0


def test_theorem1_examples():
    cfg = CalibrationConfig(alpha=0.1, eta=0.1)
    assert theorem1_rhs(counts(), cfg, 100) == pytest.approx(0.11)
    assert theorem1_rhs(counts(G_0to1=5, G_1to0=5, G_total=10), cfg, 100) == pytest.approx(0.155)


def test_theorem2_examples():
    cfg = CalibrationConfig(alpha=0.1, eta=0.1)
    assert theorem2_rhs(counts(G_in_0to1=7, G_in_1to0=7), cfg, 100) == pytest.approx(0.11)
    assert theorem2_rhs(counts(G_in_0to1=3), cfg, 100) == pytest.approx(0.14)


def test_theorem3_q_zero_relaxed_counts_corruption():
    e = [0, 1, 0, 1, 0, 0]
    z = [1, 0, 1, 1, 0, 1]
    tr = make_trace(e, z, algorithm="acrocp")
    tight, relaxed = theorem3_rhs(tr, np.zeros(6), 0.0)
    base = (1 + 0.1 * 2) / (0.1 * 6)
    assert relaxed == pytest.approx(base + sum(z) / 6)
    assert tight <= relaxed


def test_theorem3_excludes_training_and_out_of_range():
    tr = make_trace([0, 0, 0], z=[1, 1, 1], in_range=[1, 0, 1], training=[1, 0, 0], algorithm="acrocp")
    _, relaxed = theorem3_rhs(tr, np.zeros(3), 0.0)
    assert relaxed == pytest.approx((1 + 0.2) / 0.3 + 1 / 3)
    with pytest.raises(InvalidArgumentError):
        theorem3_rhs(tr, np.zeros(2), 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0, 0.45))
def test_oracle_correction_zero_residual(seed, p):
    cfg = CalibrationConfig(horizon=500)
    stream = ScoreStream(np.random.default_rng(seed).random(500))
    tr = run_calibrator("acrocp", stream, Channel(ChannelSpec("iid", p=p), seed), TrainingSchedule("prefix", 20),
                        cfg, PredictorState("zero"), correction="oracle")
    assert compensation_residual(tr) == 0
    tight, relaxed = theorem3_rhs(tr, tr.q, 1.0)
    base = (1 + 0.05 * 3) / (0.05 * 500)
    assert tight == pytest.approx(base, abs=1e-15)
    assert miscoverage(tr) <= tight + 1e-12


@pytest.mark.parametrize("which,kw,want", [
    ("c32", dict(interval=10, f_budget=3, B=1, eta=0.1, T=1000), 1.425),
    ("c52", dict(interval=10, f_budget=3, B=1, eta=0.1, T=1000), 0.316),
])
def test_corollary_examples(which, kw, want):
    assert corollary_rhs(which, kw) == pytest.approx(want, abs=1e-12)


def test_c31_example_value():
    v = corollary_rhs("c31", dict(p=0.1, delta=0.05, B=1, eta=0.1, T=10_000))
    assert v == pytest.approx(0.0011 + 2 * (0.1 + math.sqrt(math.log(20) / 20_000)), abs=1e-12)
    assert v == pytest.approx(0.2255, abs=5e-4)


corollary_inputs = st.fixed_dictionaries(dict(
    B=st.floats(0.5, 5), eta=st.floats(0.01, 0.5), T=st.integers(10, 10**5), p=st.floats(0.0, 0.45),
    p_hat=st.floats(0.0, 0.45), delta=st.floats(0.001, 0.5), I=st.integers(1, 10**4), P=st.integers(1, 500),
    interval=st.integers(1, 100), frac=st.floats(0, 1)))


@given(d=corollary_inputs, which=st.sampled_from(["c31", "c41", "c51", "c32", "c42", "c52"]))
def test_corollaries_match_reference(d, which):
    f = int(round(d["frac"] * d["interval"]))
    inputs = dict(B=d["B"], eta=d["eta"], T=d["T"], p=d["p"], p_hat=d["p_hat"], delta=d["delta"],
                  I_size=d["I"], P_size=d["P"], interval=d["interval"], f_budget=f)
    want = ref_corollary(which, d["B"], d["eta"], d["T"], p=d["p"], p_hat=d["p_hat"], delta=d["delta"], I=d["I"],
                         P=d["P"], interval=d["interval"], f=f)
    assert corollary_rhs(which, inputs) == pytest.approx(want, rel=1e-12)


def test_corollary_missing_inputs():
    with pytest.raises(InvalidArgumentError):
        corollary_rhs("c31", dict(B=1, eta=0.1, T=10))
    with pytest.raises(InvalidArgumentError):
        corollary_rhs("c99", {})
    with pytest.raises(InvalidArgumentError):
        corollary_rhs("c31", dict(B=1, eta=0.1, T=10, p=0.1, delta=1.5))


@given(interval=st.integers(1, 10**4), frac=st.floats(0, 1))
def test_fhat_at_least_half(interval, frac):
    f = int(round(frac * interval))
    assert f_hat(interval, f) == ref_fhat(interval, f)
    assert f_hat(interval, f) >= interval / 2


def test_kt_deviation_formula():
    n, d = 500, 0.05
    assert kt_deviation_bound(n, d) == pytest.approx(math.sqrt(math.log(2 / d) / (2 * (n + 1))) + 1 / (2 * (n + 1)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0, 0.49), alg=st.sampled_from(["ocp", "frocp"]),
       eta=st.sampled_from([0.01, 0.05, 0.3]), r0=st.floats(0, 1))
def test_theorems_1_and_2_pathwise(seed, p, alg, eta, r0):
    cfg = CalibrationConfig(eta=eta, r_init=r0, horizon=800)
    stream = ScoreStream(np.random.default_rng(seed).random(800))
    tr = run_calibrator(alg, stream, Channel(ChannelSpec("iid", p=p), seed), TrainingSchedule(), cfg)
    c = ref_counts(tr.e_true.tolist(), tr.z.tolist(), tr.in_range.tolist())
    obs = ref_miscov(0.1, tr.e_true.tolist())
    assert miscoverage(tr) == pytest.approx(obs, abs=1e-15)
    rep = evaluate_bounds(tr)
    if alg == "ocp":
        assert rep.entries["theorem1"].rhs == pytest.approx(ref_theorem1(c, 0.1, 1.0, eta, 800), rel=1e-12)
        assert rep.entries["theorem1"].holds
    else:
        assert rep.entries["theorem2"].rhs == pytest.approx(ref_theorem2(c, 1.0, eta, 800), rel=1e-12)
        assert rep.entries["theorem2"].holds


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["kt", "oracle", "sense_hold"]),
       chan=st.sampled_from(["iid", "markov", "budget"]))
def test_theorem3_pathwise(seed, kind, chan):
    cfg = CalibrationConfig(horizon=800)
    spec = {"iid": ChannelSpec("iid", p=0.25), "markov": ChannelSpec("markov", p01=0.02, p10=0.03),
            "budget": ChannelSpec("budget", delta=10, f_budget=4, policy="greedy_drift")}[chan]
    sched = TrainingSchedule("periodic", delta=10) if kind == "sense_hold" else TrainingSchedule("prefix", 30)
    pred = PredictorState(kind, p_known=0.25 if kind == "oracle" else 0.0)
    stream = ScoreStream(np.random.default_rng(seed).random(800))
    tr = run_calibrator("acrocp", stream, Channel(spec, seed), sched, cfg, pred)
    rep = evaluate_bounds(tr, W=default_w_bound(pred))
    assert rep.entries["theorem3_tight"].holds
    assert rep.entries["theorem3_tight"].rhs <= rep.entries["theorem3_relaxed"].rhs + 1e-15


def test_evaluate_bounds_requires_W_for_acrocp():
    with pytest.raises(InvalidArgumentError):
        evaluate_bounds(make_trace([0, 1], algorithm="acrocp"))


def test_bound_report_slack():
    rep = evaluate_bounds(make_trace([0] * 10, algorithm="ocp_ideal"))
    e = rep.entries["lemma1"]
    assert e.slack == pytest.approx(e.rhs - rep.miscov_observed)
    assert set(rep.to_dict()) == {"miscov_observed", "entries", "inputs"}
    assert "lemma1" in PATHWISE


def test_aggregate_degenerate_cases():
    tr = make_trace([0, 1, 0, 1])
    s = aggregate([tr, tr])
    assert np.all(s["per_step"]["coverage"]["std"] == 0)
    one = aggregate([tr])
    np.testing.assert_allclose(one["per_step"]["coverage"]["mean"], [1, 0.5, 2 / 3, 0.5])
    assert np.all(one["per_step"]["set_size"]["std"] == 0)
    assert aggregate([]) == {"n_trials": 0}


def test_aggregate_rejects_heterogeneous():
    with pytest.raises(InvalidArgumentError):
        aggregate([make_trace([0, 1]), make_trace([0, 1, 1])])
    with pytest.raises(InvalidArgumentError):
        aggregate([make_trace([0, 1]), make_trace([0, 1], alpha=0.2)])


@given(chunks=st.lists(st.integers(1, 6), min_size=1, max_size=5), seed=st.integers(0, 1000))
def test_accumulator_merge_matches_direct_statistics(chunks, seed):
    rng = np.random.default_rng(seed)
    n = sum(chunks)
    e = rng.integers(0, 2, size=(n, 12))
    sz = rng.random((n, 12))
    cfg = CalibrationConfig(horizon=12)
    total = TraceAccumulator()
    k = 0
    for c in chunks:
        part = TraceAccumulator()
        part.add_arrays(cfg, e[k:k + c], sz[k:k + c])
        total.merge(part)
        k += c
    s = total.summary()
    cov = np.cumsum(1 - e, axis=1) / np.arange(1, 13)
    np.testing.assert_allclose(s["per_step"]["coverage"]["mean"], cov.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(s["per_step"]["coverage"]["std"], cov.std(axis=0), atol=1e-9)
    assert s["n_trials"] == n
