"""Threshold-update state machines: OCP, F-ROCP and AC-ROCP.

The update rules are written as plain arithmetic on ``numpy`` values so the
same functions drive both the scalar calibrators here and the batched engine
in :mod:`robust_ocp.harness.engine`.  Every rule tests the regime of the
threshold *before* the update.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .core import (
    CalibrationConfig,
    ConfigurationError,
    InvalidArgumentError,
    ProtocolError,
    RoundScore,
    RunTrace,
    ScoreStream,
    coverage_indicator,
)
from .corruption import Channel
from .predictors import (
    PredictorState,
    compensation,
    default_w_bound,
    oracle_correction,
    predict_q,
    predictor_train,
)

Algorithm = Literal["ocp", "frocp", "acrocp", "ocp_ideal"]
ALGORITHMS = ("ocp", "frocp", "acrocp", "ocp_ideal")


# -- update rules (scalar or array) -------------------------------------------------


def ocp_update(r, e_obs, alpha: float, eta: float):
    return r - eta * (alpha - e_obs)


def frocp_update(r, e_obs, alpha: float, eta: float, score_bound: float):
    in_range = r - eta * (alpha - e_obs)
    return np.where(r >= score_bound, r - eta * alpha, np.where(r < 0, r - eta * (alpha - 1), in_range))


def acrocp_update(h, e_obs, w, alpha: float, eta: float, score_bound: float):
    in_range = h - eta * ((alpha - e_obs) + w)
    return np.where(h >= score_bound, h - eta * alpha, np.where(h < 0, h - eta * (alpha - 1), in_range))


def in_range_flag(r, score_bound: float):
    return (r >= 0) & (r < score_bound)


# -- OCP / F-ROCP --------------------------------------------------------------------


@dataclass(frozen=True)
class OcpState:
    r: float


@dataclass(frozen=True)
class FrocpState:
    r: float


def ocp_step(state: OcpState, e_obs: int, cfg: CalibrationConfig) -> OcpState:
    """Plain online gradient step driven by the (possibly corrupted) feedback."""
    return OcpState(float(ocp_update(state.r, e_obs, cfg.alpha, cfg.eta)))


def frocp_step(state: FrocpState, e_obs: int, cfg: CalibrationConfig) -> FrocpState:
    """Filtered step: out-of-range thresholds ignore the feedback.

    At ``r >= B`` every label is covered, so the true gradient is ``alpha``;
    at ``r < 0`` nothing is covered, so it is ``alpha - 1``.
    """
    return FrocpState(float(frocp_update(state.r, e_obs, cfg.alpha, cfg.eta, cfg.score_bound)))


# -- training schedules --------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSchedule:
    """Probe rounds ``P``: none, a prefix ``{1..size_P}``, or ``{1, delta+1, 2 delta+1, ...}``."""

    kind: Literal["none", "prefix", "periodic"] = "none"
    size_P: int = 0
    delta: int = 0

    def __post_init__(self) -> None:
        if self.kind == "prefix" and self.size_P < 1:
            raise ConfigurationError("prefix schedule needs size_P >= 1")
        if self.kind == "periodic" and self.delta < 1:
            raise ConfigurationError("periodic schedule needs delta >= 1")
        if self.kind not in ("none", "prefix", "periodic"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")

    def contains(self, t: int) -> bool:
        if self.kind == "prefix":
            return t <= self.size_P
        if self.kind == "periodic":
            return (t - 1) % self.delta == 0
        return False

    def total(self, horizon: int) -> int:
        """``|P|`` over a horizon of ``horizon`` rounds."""
        if self.kind == "prefix":
            if self.size_P > horizon:
                raise ConfigurationError(f"prefix of {self.size_P} rounds exceeds horizon {horizon}")
            return self.size_P
        if self.kind == "periodic":
            return math.ceil(horizon / self.delta)
        return 0

    def mask(self, horizon: int) -> np.ndarray:
        t = np.arange(1, horizon + 1)
        if self.kind == "prefix":
            self.total(horizon)
            return t <= self.size_P
        if self.kind == "periodic":
            return (t - 1) % self.delta == 0
        return np.zeros(horizon, dtype=bool)


def full_set_rounds(size_P: int, alpha: float) -> int:
    """Number of probes that play the full set, ``ceil((1 - alpha) |P|)``.

    ``(1 - alpha) * size_P`` is rounded to 12 digits first so that values such
    as ``0.9 * 10 = 9.000000000000002`` do not round up spuriously.
    """
    return math.ceil(round((1 - alpha) * size_P, 12))


def training_threshold(i: int, size_P: int, alpha: float, score_bound: float) -> float:
    """Probe threshold for the ``i``-th training round: ``B`` (full set) or ``0`` (empty)."""
    if not 1 <= i <= size_P:
        raise InvalidArgumentError(f"training index {i} outside 1..{size_P}")
    return score_bound if i <= full_set_rounds(size_P, alpha) else 0.0


def recover_z(i: int, size_P: int, alpha: float, e_obs: int) -> int:
    """Exact flip indicator on a probe round.

    A full set forces ``e = 0``, so any reported miss is a flip; an empty set
    forces ``e = 1``, so any reported cover is a flip.
    """
    if i <= full_set_rounds(size_P, alpha):
        return int(e_obs)
    return 1 - int(e_obs)


# -- AC-ROCP -------------------------------------------------------------------------


@dataclass(frozen=True)
class AcrocpState:
    h: float
    train_count: int = 0
    predictor: PredictorState = field(default_factory=PredictorState)
    rounds: int = 0


@dataclass(frozen=True)
class AcrocpRound:
    """Bookkeeping of one completed AC-ROCP round."""

    r_played: float
    is_training: bool
    q: float
    w: float
    z_recovered: int | None


def acrocp_play(state: AcrocpState, t: int, schedule: TrainingSchedule, cfg: CalibrationConfig) -> float:
    """Threshold AC-ROCP plays at round ``t`` (first phase of a round)."""
    if t != state.rounds + 1:
        raise ProtocolError(f"AC-ROCP expected round {state.rounds + 1}, got {t}")
    if schedule.contains(t):
        return training_threshold(state.train_count + 1, schedule.total(cfg.horizon), cfg.alpha, cfg.score_bound)
    return state.h


def acrocp_complete(
    state: AcrocpState,
    t: int,
    schedule: TrainingSchedule,
    e_obs: int,
    cfg: CalibrationConfig,
    w_bound: float | None = None,
    correction: float | None = None,
) -> tuple[AcrocpState, AcrocpRound]:
    """Second phase: consume the feedback for the threshold played at ``t``.

    ``correction`` replaces the predictor-based compensation; the harness uses
    it to inject the ideal correction in oracle-side experiments.
    """
    r_played = acrocp_play(state, t, schedule, cfg)
    if schedule.contains(t):
        i = state.train_count + 1
        z = recover_z(i, schedule.total(cfg.horizon), cfg.alpha, e_obs)
        new = replace(state, train_count=i, predictor=predictor_train(state.predictor, z), rounds=t)
        return new, AcrocpRound(r_played, True, 0.0, 0.0, z)
    h = state.h
    if w_bound is None:
        w_bound = default_w_bound(state.predictor)
    q = predict_q(state.predictor)
    if 0 <= h < cfg.score_bound:
        w = float(correction) if correction is not None else float(compensation(e_obs, q, w_bound))
        q_eff = w * (2 * e_obs - 1)
    else:
        w, q_eff = 0.0, q
    h_new = float(acrocp_update(h, e_obs, w, cfg.alpha, cfg.eta, cfg.score_bound))
    return replace(state, h=h_new, rounds=t), AcrocpRound(r_played, False, q_eff, w, None)


def acrocp_round(
    state: AcrocpState,
    t: int,
    schedule: TrainingSchedule,
    e_obs: int,
    cfg: CalibrationConfig,
    w_bound: float | None = None,
) -> tuple[float, AcrocpState]:
    new, info = acrocp_complete(state, t, schedule, e_obs, cfg, w_bound)
    return info.r_played, new


class AcrocpCalibrator:
    """Two-phase AC-ROCP driver: call :meth:`play`, then :meth:`feedback`."""

    def __init__(self, cfg: CalibrationConfig, schedule: TrainingSchedule,
                 predictor: PredictorState | None = None, w_bound: float | None = None) -> None:
        self.cfg = cfg
        self.schedule = schedule
        self.state = AcrocpState(h=cfg.r_init, predictor=predictor or PredictorState())
        self.w_bound = default_w_bound(self.state.predictor) if w_bound is None else w_bound
        self._pending: int | None = None
        self.last: AcrocpRound | None = None

    def play(self, t: int) -> float:
        r = acrocp_play(self.state, t, self.schedule, self.cfg)
        self._pending = t
        return r

    def feedback(self, t: int, e_obs: int, correction: float | None = None) -> AcrocpRound:
        if self._pending != t:
            raise ProtocolError(f"feedback for round {t} but round {self._pending} was played")
        self.state, self.last = acrocp_complete(self.state, t, self.schedule, e_obs, self.cfg,
                                                self.w_bound, correction)
        self._pending = None
        return self.last


# -- single-trial runner ---------------------------------------------------------------


def run_calibrator(
    algorithm: Algorithm,
    stream: Sequence[RoundScore],
    channel: Channel | None,
    schedule: TrainingSchedule,
    cfg: CalibrationConfig,
    predictor: PredictorState | None = None,
    w_bound: float | None = None,
    correction: Literal["predictor", "oracle"] = "predictor",
) -> RunTrace:
    """Run one trial round by round and record everything.

    ``correction="oracle"`` drives AC-ROCP with the ideal correction computed
    from the channel's flip indicator; it exists for oracle-side checks only.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    T = cfg.horizon
    if len(stream) < T:
        raise InvalidArgumentError(f"stream has {len(stream)} rounds, horizon is {T}")
    stream = ScoreStream.from_rounds(stream)[:T]
    if algorithm != "ocp_ideal" and channel is None:
        raise ConfigurationError(f"{algorithm} needs a corruption channel")
    if algorithm != "acrocp" and schedule.kind != "none":
        raise ConfigurationError("training schedules only apply to acrocp")

    r_col = np.empty(T)
    cols = {k: np.zeros(T, dtype=np.int8) for k in ("e_true", "e_obs", "z", "in_range", "is_training")}
    q_col = np.zeros(T)
    w_col = np.zeros(T)
    B = cfg.score_bound
    r = cfg.r_init
    ac = AcrocpCalibrator(cfg, schedule, predictor, w_bound) if algorithm == "acrocp" else None

    for i in range(T):
        t = i + 1
        s = float(stream.scores[i])
        r_play = ac.play(t) if ac is not None else r
        e = coverage_indicator(r_play, s)
        if algorithm == "ocp_ideal":
            e_obs, z = e, 0
        else:
            e_obs, z = channel.corrupt(e, t)
        r_col[i] = r_play
        cols["e_true"][i], cols["e_obs"][i], cols["z"][i] = e, e_obs, z
        cols["in_range"][i] = 0 <= r_play < B
        if algorithm in ("ocp", "ocp_ideal"):
            r = float(ocp_update(r, e_obs, cfg.alpha, cfg.eta))
        elif algorithm == "frocp":
            r = float(frocp_update(r, e_obs, cfg.alpha, cfg.eta, B))
        else:
            corr = float(oracle_correction(e_obs, z)) if correction == "oracle" else None
            info = ac.feedback(t, e_obs, corr)
            cols["is_training"][i] = info.is_training
            q_col[i], w_col[i] = info.q, info.w
    r_final = ac.state.h if ac is not None else r
    return RunTrace(
        config=cfg,
        r=r_col,
        s=stream.scores.copy(),
        set_size=stream.set_sizes(r_col),
        r_final=float(r_final),
        q=q_col,
        w=w_col,
        algorithm=algorithm,
        **cols,
    )
