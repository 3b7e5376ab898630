"""Batched simulation: many trials, several calibrator variants, one pass over the scores.

Each variant advances the same per-trial score streams with its own channel
bank and vectorised calibrator state.  Update arithmetic is shared with
:mod:`robust_ocp.calibrators`, so a batch reproduces the scalar
:func:`~robust_ocp.calibrators.run_calibrator` trial for trial, bit for bit.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..calibrators import (
    ALGORITHMS,
    TrainingSchedule,
    acrocp_update,
    frocp_update,
    full_set_rounds,
    in_range_flag,
    ocp_update,
)
from ..core import CalibrationConfig, ConfigurationError, RunTrace, ScoreStream
from ..corruption import ChannelBank, ChannelSpec
from ..predictors import (
    PredictorState,
    compensation,
    default_w_bound,
    kt_estimate,
    oracle_correction,
    q_from_probability,
)
from .streams import StreamSpec, stream_blocks

BLOCK = 500


@dataclass(frozen=True)
class TrialSetup:
    """Everything one calibrator variant needs besides the scores."""

    algorithm: str
    cfg: CalibrationConfig
    channel: ChannelSpec
    schedule: TrainingSchedule = TrainingSchedule()
    predictor: PredictorState = PredictorState()
    w_bound: float | None = None
    correction: str = "predictor"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm != "acrocp" and self.schedule.kind != "none":
            raise ConfigurationError("training schedules only apply to acrocp")
        if self.correction not in ("predictor", "oracle"):
            raise ConfigurationError(f"unknown correction {self.correction!r}")
        self.schedule.total(self.cfg.horizon)

    @property
    def W(self) -> float:
        """Compensation bound actually enforced."""
        if self.correction == "oracle":
            return 1.0
        return default_w_bound(self.predictor) if self.w_bound is None else self.w_bound


class BatchRun:
    """Vectorised calibrator for ``n`` trials of one :class:`TrialSetup`."""

    def __init__(self, setup: TrialSetup, seeds: Sequence[int], candidates: bool) -> None:
        self.setup = setup
        cfg = setup.cfg
        n, T = len(seeds), cfg.horizon
        self.n = n
        self.bank = None if setup.algorithm == "ocp_ideal" else ChannelBank(setup.channel, seeds, T)
        self.r = np.full(n, float(cfg.r_init))
        self.out_r = np.empty((n, T))
        self.out_size = np.empty((n, T))
        self.out_q = np.zeros((n, T))
        self.out_w = np.zeros((n, T))
        self.flags = {k: np.zeros((n, T), dtype=np.int8) for k in ("e_true", "e_obs", "z", "in_range", "is_training")}
        self.candidates = candidates
        # predictor state, one entry per trial
        self.train_mask = setup.schedule.mask(T)
        self.n_probe = setup.schedule.total(T)
        self.n_full = full_set_rounds(self.n_probe, cfg.alpha) if self.n_probe else 0
        self.train_i = 0
        self.kt_sum = np.zeros(n)
        self.z_held = np.zeros(n)
        self.W = setup.W

    def _q(self) -> NDArray[np.float64] | float:
        pred = self.setup.predictor
        if pred.kind == "zero":
            return 0.0
        if pred.kind == "oracle":
            return float(q_from_probability(pred.p_known))
        if pred.kind == "kt":
            return q_from_probability(kt_estimate(self.kt_sum, pred.kt_count + self.train_i, pred.gamma))
        return self.z_held

    def step(self, t: int, s: NDArray[np.float64], cands: NDArray[np.float64] | None) -> None:
        setup, cfg = self.setup, self.setup.cfg
        i = t - 1
        alpha, eta, B = cfg.alpha, cfg.eta, cfg.score_bound
        training = setup.algorithm == "acrocp" and self.train_mask[i]
        if training:
            self.train_i += 1
            r_play = np.full(self.n, B if self.train_i <= self.n_full else 0.0)
        else:
            r_play = self.r
        e = (r_play < s).astype(np.int8)
        if self.bank is None:
            e_obs, z = e, np.zeros_like(e)
        else:
            e_obs, z = self.bank.corrupt(e, t)
        self.out_r[:, i] = r_play
        f = self.flags
        f["e_true"][:, i], f["e_obs"][:, i], f["z"][:, i] = e, e_obs, z
        f["in_range"][:, i] = in_range_flag(r_play, B)
        if cands is not None:
            self.out_size[:, i] = (cands <= r_play[:, None]).sum(axis=1)
        else:
            self.out_size[:, i] = 2.0 * np.maximum(r_play, 0.0)

        alg = setup.algorithm
        if alg in ("ocp", "ocp_ideal"):
            self.r = ocp_update(self.r, e_obs, alpha, eta)
        elif alg == "frocp":
            self.r = frocp_update(self.r, e_obs, alpha, eta, B)
        elif training:
            f["is_training"][:, i] = 1
            z_rec = e_obs if self.train_i <= self.n_full else 1 - e_obs
            self.kt_sum = self.kt_sum + z_rec
            self.z_held = z_rec.astype(float)
        else:
            h = self.r
            q = self._q()
            inr = in_range_flag(h, B)
            if setup.correction == "oracle":
                w = oracle_correction(e_obs, z).astype(float)
            else:
                w = compensation(e_obs, q, self.W)
            w = np.where(inr, w, 0.0)
            self.out_q[:, i] = np.where(inr, w * (2 * e_obs - 1), q)
            self.out_w[:, i] = w
            self.r = acrocp_update(h, e_obs, w, alpha, eta, B)

    def p_hat(self) -> NDArray[np.float64] | None:
        """Final flip-probability estimate per trial (KT and oracle predictors)."""
        pred = self.setup.predictor
        if pred.kind == "kt":
            return kt_estimate(self.kt_sum, pred.kt_count + self.train_i, pred.gamma)
        if pred.kind == "oracle":
            return np.full(self.n, pred.p_known)
        return None

    def trace(self, k: int, scores: NDArray[np.float64]) -> RunTrace:
        f = self.flags
        return RunTrace(
            config=self.setup.cfg,
            r=self.out_r[k],
            s=scores,
            e_true=f["e_true"][k],
            e_obs=f["e_obs"][k],
            z=f["z"][k],
            set_size=self.out_size[k],
            in_range=f["in_range"][k],
            is_training=f["is_training"][k],
            r_final=float(self.r[k]),
            q=self.out_q[k],
            w=self.out_w[k],
            algorithm=self.setup.algorithm,
        )


@dataclass
class BatchResult:
    setup: TrialSetup
    seeds: list[int]
    scores: NDArray[np.float64]
    run: BatchRun

    def traces(self) -> list[RunTrace]:
        return [self.run.trace(k, self.scores[k]) for k in range(len(self.seeds))]


def simulate(
    setups: Sequence[TrialSetup],
    stream: StreamSpec,
    seeds: Sequence[int],
    fixed_stream: ScoreStream | None = None,
    block: int = BLOCK,
) -> list[BatchResult]:
    """Run every setup on the trials ``seeds``; all setups see the same scores."""
    if not setups:
        return []
    T, B = setups[0].cfg.horizon, setups[0].cfg.score_bound
    if any(s.cfg.horizon != T or s.cfg.score_bound != B for s in setups):
        raise ConfigurationError("setups sharing a stream must share horizon and score bound")
    if fixed_stream is not None and len(fixed_stream) < T:
        raise ConfigurationError(f"score file has {len(fixed_stream)} rounds, horizon is {T}")
    n = len(seeds)
    is_cls = stream.mode == "classification"
    runs = [BatchRun(s, seeds, is_cls) for s in setups]
    scores = np.empty((n, T))
    iters = [stream_blocks(stream, seed, T, B, block, fixed_stream) for seed in seeds]
    for t0 in range(0, T, block):
        parts = [next(it) for it in iters]
        s_blk = np.stack([p[0] for p in parts])
        c_blk = np.stack([p[1] for p in parts]) if is_cls else None
        L = s_blk.shape[1]
        scores[:, t0:t0 + L] = s_blk
        for j in range(L):
            s_col = s_blk[:, j]
            c_col = None if c_blk is None else c_blk[:, j]
            for run in runs:
                run.step(t0 + j + 1, s_col, c_col)
    return [BatchResult(s, list(seeds), scores, run) for s, run in zip(setups, runs)]
