import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ref_run

from robust_ocp.analysis import corruption_counts, hidden_envelope, lemma1_rhs, miscoverage, ocp_iterate_envelope
from robust_ocp.calibrators import (
    AcrocpCalibrator,
    AcrocpState,
    FrocpState,
    OcpState,
    TrainingSchedule,
    acrocp_complete,
    acrocp_round,
    frocp_step,
    full_set_rounds,
    ocp_step,
    recover_z,
    run_calibrator,
    training_threshold,
)
from robust_ocp.core import (
    CalibrationConfig,
    ConfigurationError,
    InvalidArgumentError,
    ProtocolError,
    RoundScore,
    ScoreStream,
)
from robust_ocp.corruption import Channel, ChannelSpec
from robust_ocp.predictors import PredictorState, default_w_bound


class FixedChannel:
    """Deterministic test channel replaying a flip pattern (or a rule of (t, e))."""

    def __init__(self, rule):
        self.rule = rule

    def corrupt(self, e, t):
        z = self.rule(t, e)
        return e ^ z, z


def cfg_(**kw):
    base = dict(alpha=0.1, eta=0.05, score_bound=1.0, r_init=0.0, horizon=100)
    base.update(kw)
    return CalibrationConfig(**base)


def const_stream(s, T):
    return ScoreStream(np.full(T, s))


# -- single steps --------------------------------------------------------------------


@pytest.mark.parametrize("r,e,alpha,eta,want", [(0.5, 0, 0.1, 0.05, 0.495), (0.5, 1, 0.1, 0.05, 0.545),
                                                (0.0, 1, 0.1, 0.1, 0.09)])
def test_ocp_step_examples(r, e, alpha, eta, want):
    cfg = cfg_(alpha=alpha, eta=eta)
    assert ocp_step(OcpState(r), e, cfg).r == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("r,e,want", [(1.05, 1, 1.045), (-0.01, 0, 0.035), (0.5, 1, 0.545)])
def test_frocp_step_examples(r, e, want):
    assert frocp_step(FrocpState(r), e, cfg_()).r == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("i,P,alpha,B,want", [(9, 10, 0.1, 1, 1), (10, 10, 0.1, 1, 0), (1, 1, 0.5, 2, 2)])
def test_training_threshold_examples(i, P, alpha, B, want):
    assert training_threshold(i, P, alpha, B) == want


@pytest.mark.parametrize("i", [0, 11])
def test_training_threshold_range(i):
    with pytest.raises(InvalidArgumentError):
        training_threshold(i, 10, 0.1, 1.0)


@pytest.mark.parametrize("i,e,want", [(3, 1, 1), (10, 1, 0), (10, 0, 1)])
def test_recover_z_examples(i, e, want):
    assert recover_z(i, 10, 0.1, e) == want


@given(P=st.integers(1, 500), alpha=st.floats(0, 1))
def test_empty_probe_count_is_floor(P, alpha):
    # empty-set probes number |P| - ceil((1 - alpha)|P|) = floor(alpha |P|)
    n_full = full_set_rounds(P, alpha)
    assert P - n_full == math.floor(round(alpha * P, 12))


def test_full_set_rounds_rounding():
    assert full_set_rounds(10, 0.1) == 9
    assert full_set_rounds(50, 0.1) == 45
    assert full_set_rounds(7, 0.1) == math.ceil(6.3)


def test_acrocp_examples():
    cfg = cfg_()
    sched = TrainingSchedule("prefix", 10)
    st0 = AcrocpState(h=0.3)
    r, st1 = acrocp_round(st0, 1, sched, 0, cfg)
    assert r == 1.0 and st1.h == 0.3 and st1.train_count == 1

    none = TrainingSchedule()
    oracle = PredictorState("oracle", p_known=0.1)
    st2, info = acrocp_complete(AcrocpState(h=0.5, predictor=oracle), 1, none, 1, cfg, w_bound=0.125)
    assert info.w == pytest.approx(-0.125)
    assert st2.h == pytest.approx(0.55125, abs=1e-12)

    for e in (0, 1):
        _, st3 = acrocp_round(AcrocpState(h=1.2, predictor=oracle), 1, none, e, cfg)
        assert st3.h == pytest.approx(1.195, abs=1e-12)


def test_acrocp_protocol_errors():
    cfg = cfg_()
    ac = AcrocpCalibrator(cfg, TrainingSchedule())
    with pytest.raises(ProtocolError):
        ac.feedback(1, 0)
    ac.play(1)
    with pytest.raises(ProtocolError):
        ac.feedback(2, 0)
    ac.feedback(1, 0)
    with pytest.raises(ProtocolError):
        ac.play(3)


def test_schedules():
    assert [t for t in range(1, 12) if TrainingSchedule("periodic", delta=5).contains(t)] == [1, 6, 11]
    assert TrainingSchedule("periodic", delta=5).total(12) == 3
    assert TrainingSchedule("prefix", 4).mask(6).tolist() == [True] * 4 + [False] * 2
    with pytest.raises(ConfigurationError):
        TrainingSchedule("prefix", 0)
    with pytest.raises(ConfigurationError):
        TrainingSchedule("prefix", 20).total(10)


# -- whole runs ------------------------------------------------------------------------


def test_run_ocp_ideal_hand_unrolled():
    cfg = cfg_(alpha=0.5, eta=0.1, r_init=0.5, horizon=4)
    tr = run_calibrator("ocp_ideal", const_stream(0.5, 4), None, TrainingSchedule(), cfg)
    ref = ref_run("ocp", [0.5] * 4, lambda t, e: 0, 0.5, 0.1, 1.0, r_init=0.5)
    # r = s = 0.5 counts as covered, so the cycle starts with a step down
    assert tr.e_true.tolist() == ref["e"] == [0, 1, 0, 1]
    np.testing.assert_allclose(tr.r, ref["r"], atol=1e-12)
    np.testing.assert_allclose(tr.r, [0.5, 0.45, 0.5, 0.45], atol=1e-12)
    assert miscoverage(tr) == 0


def test_run_ocp_ideal_hand_unrolled_exact():
    # r=0.5, s=0.5 -> covered, step down; with s slightly above the start the sequence is 1,0,1,0
    cfg = cfg_(alpha=0.5, eta=0.1, r_init=0.5, horizon=4)
    tr = run_calibrator("ocp_ideal", const_stream(0.5 + 1e-9, 4), None, TrainingSchedule(), cfg)
    assert tr.e_true.tolist() == [1, 0, 1, 0]
    np.testing.assert_allclose(tr.r, [0.5, 0.55, 0.5, 0.55], atol=1e-12)


def test_ocp_clean_channel_equals_ideal():
    rng = np.random.default_rng(1)
    cfg = cfg_(horizon=500)
    stream = ScoreStream(rng.random(500))
    a = run_calibrator("ocp_ideal", stream, None, TrainingSchedule(), cfg)
    for alg in ("ocp", "frocp"):
        b = run_calibrator(alg, stream, Channel(ChannelSpec("ideal")), TrainingSchedule(), cfg)
        np.testing.assert_array_equal(a.r, b.r)
    c = run_calibrator("acrocp", stream, Channel(ChannelSpec("ideal")), TrainingSchedule(), cfg, PredictorState("zero"))
    np.testing.assert_array_equal(a.r, c.r)


def test_frocp_all_flipped_stays_in_envelope():
    cfg = cfg_(alpha=0.1, eta=0.2, r_init=0.9, horizon=20)
    tr = run_calibrator("frocp", const_stream(0.5, 20), FixedChannel(lambda t, e: 1), TrainingSchedule(), cfg)
    assert tr.r.min() >= -0.02 - 1e-12 and tr.r.max() <= 1.18 + 1e-12


def test_stream_too_short():
    with pytest.raises(InvalidArgumentError):
        run_calibrator("ocp", const_stream(0.5, 5), Channel(ChannelSpec()), TrainingSchedule(), cfg_(horizon=10))


def test_run_requires_channel_and_schedule_rules():
    s = const_stream(0.5, 10)
    with pytest.raises(ConfigurationError):
        run_calibrator("ocp", s, None, TrainingSchedule(), cfg_(horizon=10))
    with pytest.raises(ConfigurationError):
        run_calibrator("frocp", s, Channel(ChannelSpec()), TrainingSchedule("prefix", 2), cfg_(horizon=10))


def test_classification_set_sizes_in_trace():
    rounds = [RoundScore(t, 0.5, (0.2, 0.5, 0.8), "classification") for t in range(1, 6)]
    tr = run_calibrator("ocp_ideal", rounds, None, TrainingSchedule(), cfg_(horizon=5, r_init=0.5))
    assert tr.set_size[0] == 2


# -- agreement with the independent reference ------------------------------------------

flip_patterns = st.lists(st.integers(0, 1), min_size=60, max_size=60)
score_lists = st.lists(st.floats(0, 1), min_size=60, max_size=60)


@settings(max_examples=60, deadline=None)
@given(scores=score_lists, zs=flip_patterns, alg=st.sampled_from(["ocp", "frocp"]),
       alpha=st.sampled_from([0.05, 0.1, 0.3]), eta=st.sampled_from([0.01, 0.1, 0.3]))
def test_ocp_frocp_match_reference(scores, zs, alg, alpha, eta):
    cfg = cfg_(alpha=alpha, eta=eta, horizon=60)
    tr = run_calibrator(alg, ScoreStream(np.array(scores)), FixedChannel(lambda t, e: zs[t - 1]),
                        TrainingSchedule(), cfg)
    ref = ref_run(alg, scores, lambda t, e: zs[t - 1], alpha, eta, 1.0)
    np.testing.assert_allclose(tr.r, ref["r"], rtol=0, atol=1e-12)
    assert tr.e_true.tolist() == ref["e"] and tr.z.tolist() == ref["z"]
    assert tr.r_final == pytest.approx(ref["r_final"], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(scores=score_lists, zs=flip_patterns, kind=st.sampled_from(["kt", "sense_hold", "oracle", "zero"]),
       sched=st.sampled_from([("prefix", 7, 0), ("periodic", 0, 5), ("none", 0, 0)]))
def test_acrocp_matches_reference(scores, zs, kind, sched):
    if sched[0] == "none" and kind in ("kt", "sense_hold"):
        sched = ("prefix", 3, 0)
    cfg = cfg_(horizon=60)
    schedule = TrainingSchedule(*sched)
    pred = PredictorState(kind, p_known=0.2 if kind == "oracle" else 0.0)
    W = default_w_bound(pred)
    tr = run_calibrator("acrocp", ScoreStream(np.array(scores)), FixedChannel(lambda t, e: zs[t - 1]),
                        schedule, cfg, pred)

    def q_of(hist):
        if kind == "zero":
            return 0.0
        if kind == "oracle":
            return 0.2 / (0.4 - 1)
        if kind == "kt":
            p = min((0.5 + sum(hist)) / (len(hist) + 1), 0.45)
            return p / (2 * p - 1)
        return float(hist[-1])

    probes = [t for t in range(1, 61) if schedule.contains(t)]
    ref = ref_run("acrocp", scores, lambda t, e: zs[t - 1], 0.1, 0.05, 1.0, probes=probes, q_of=q_of, W=W)
    np.testing.assert_allclose(tr.r, ref["r"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(tr.w, ref["w"], rtol=0, atol=1e-12)
    assert tr.is_training.tolist() == [int(t in probes) for t in range(1, 61)]


# -- invariants ------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0, 0.49), eta=st.sampled_from([0.01, 0.05, 0.2]),
       r0=st.floats(0, 1))
def test_ocp_iterate_envelope(seed, p, eta, r0):
    cfg = cfg_(eta=eta, r_init=r0, horizon=400)
    stream = ScoreStream(np.random.default_rng(seed).random(400))
    tr = run_calibrator("ocp", stream, Channel(ChannelSpec("iid", p=p), seed), TrainingSchedule(), cfg)
    lo, hi = ocp_iterate_envelope(tr)
    assert np.all(tr.r >= lo - 1e-12) and np.all(tr.r <= hi + 1e-12)
    # telescoping: r_{T+1} - r_1 = -eta * sum of observed gradients
    assert tr.r_final - tr.r[0] == pytest.approx(-eta * np.sum(0.1 - tr.e_obs), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), zs=st.lists(st.integers(0, 1), min_size=1, max_size=50),
       adaptive=st.booleans(), r0=st.floats(0, 1))
def test_frocp_envelope_adversarial(seed, zs, adaptive, r0):
    cfg = cfg_(eta=0.1, r_init=r0, horizon=300)
    stream = ScoreStream(np.random.default_rng(seed).random(300))
    # adaptive adversary lies whenever it would push the threshold outward
    rule = (lambda t, e: 1) if adaptive else (lambda t, e: zs[(t - 1) % len(zs)])
    tr = run_calibrator("frocp", stream, FixedChannel(rule), TrainingSchedule(), cfg)
    r_all = np.append(tr.r, tr.r_final)
    assert r_all.min() >= -0.1 * 0.1 - 1e-12
    assert r_all.max() <= 1 + 0.1 * 0.9 + 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["kt", "sense_hold", "oracle"]),
       zs=st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_acrocp_hidden_envelope(seed, kind, zs):
    cfg = cfg_(eta=0.1, horizon=300)
    sched = TrainingSchedule("periodic", delta=7) if kind == "sense_hold" else TrainingSchedule("prefix", 20)
    pred = PredictorState(kind, p_known=0.3 if kind == "oracle" else 0.0)
    stream = ScoreStream(np.random.default_rng(seed).random(300))
    ac = AcrocpCalibrator(cfg, sched, pred)
    lo, hi = hidden_envelope(cfg, ac.w_bound)
    for t in range(1, 301):
        r = ac.play(t)
        e = int(r < stream.scores[t - 1])
        ac.feedback(t, e ^ zs[t % len(zs)])
        assert lo - 1e-12 <= ac.state.h <= hi + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), P=st.integers(1, 60), alpha=st.sampled_from([0.05, 0.1, 0.25, 0.5]))
def test_training_miscoverage_mass(seed, P, alpha):
    cfg = cfg_(alpha=alpha, horizon=100)
    # scores strictly positive so the empty-set probe always misses
    stream = ScoreStream(0.001 + 0.999 * np.random.default_rng(seed).random(100))
    tr = run_calibrator("acrocp", stream, Channel(ChannelSpec("iid", p=0.3), seed), TrainingSchedule("prefix", P),
                        cfg, PredictorState("kt"))
    mask = tr.is_training.astype(bool)
    assert int(tr.e_true[mask].sum()) == math.floor(round(alpha * P, 12))
    # probes recover z exactly
    ac_z = [recover_z(i, P, alpha, int(e)) for i, e in enumerate(tr.e_obs[mask], start=1)]
    assert ac_z == tr.z[mask].tolist()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), eta=st.sampled_from([0.01, 0.05, 0.2]), r0=st.floats(0, 1))
def test_lemma1_pathwise(seed, eta, r0):
    cfg = cfg_(eta=eta, r_init=r0, horizon=1000)
    stream = ScoreStream(np.random.default_rng(seed).random(1000))
    tr = run_calibrator("ocp_ideal", stream, None, TrainingSchedule(), cfg)
    assert miscoverage(tr) <= lemma1_rhs(cfg, 1000) + 1e-12
    assert corruption_counts(tr).G_total == 0
