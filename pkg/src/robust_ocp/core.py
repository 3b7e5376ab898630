"""Domain types and the elementary conformal primitives shared by every calibrator."""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import Literal, overload

import numpy as np
from numpy.typing import NDArray

Mode = Literal["classification", "regression"]

CANDIDATE_ATOL = 1e-12


class InvalidArgumentError(ValueError):
    """A function received an argument outside its domain."""


class ConfigurationError(ValueError):
    """An inconsistent or out-of-range configuration value."""


class ProtocolError(RuntimeError):
    """A stateful component was driven out of order."""


@dataclass(frozen=True)
class CalibrationConfig:
    """Hyperparameters of a single calibration run.

    ``score_bound`` is the upper end ``B`` of the score range ``[0, B]``.
    """

    alpha: float = 0.1
    eta: float = 0.05
    score_bound: float = 1.0
    r_init: float = 0.0
    horizon: int = 10_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if not self.score_bound > 0 or not math.isfinite(self.score_bound):
            raise ConfigurationError(f"score_bound must be positive and finite, got {self.score_bound}")
        if not 0.0 <= self.r_init <= self.score_bound:
            raise ConfigurationError(f"r_init must lie in [0, {self.score_bound}], got {self.r_init}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigurationError(f"horizon must be a positive integer, got {self.horizon}")


@dataclass(frozen=True)
class RoundScore:
    """Scores revealed at round ``t``.

    In classification mode ``candidates`` holds the score of every candidate
    label; one of them is the true label's score ``s_true``.
    """

    t: int
    s_true: float
    candidates: tuple[float, ...] | None = None
    mode: Mode = "regression"

    def validate(self, score_bound: float) -> None:
        if not (0.0 <= self.s_true <= score_bound):
            raise InvalidArgumentError(f"round {self.t}: score {self.s_true} outside [0, {score_bound}]")
        if self.mode == "classification":
            if self.candidates is None:
                raise ConfigurationError(f"round {self.t}: classification round without candidates")
            cands = np.asarray(self.candidates, dtype=float)
            if np.any((cands < 0) | (cands > score_bound)):
                raise InvalidArgumentError(f"round {self.t}: candidate score outside [0, {score_bound}]")
            if not np.any(np.abs(cands - self.s_true) <= CANDIDATE_ATOL):
                raise InvalidArgumentError(f"round {self.t}: no candidate equals s_true={self.s_true}")
        elif self.mode != "regression":
            raise ConfigurationError(f"unknown mode {self.mode!r}")


class ScoreStream(Sequence[RoundScore]):
    """Columnar score stream; indexing yields :class:`RoundScore` values.

    ``scores`` has shape ``(T,)``; ``candidates`` (classification only) has
    shape ``(T, K)``.
    """

    def __init__(self, scores: NDArray[np.float64], candidates: NDArray[np.float64] | None = None,
                 mode: Mode = "regression") -> None:
        self.scores = np.ascontiguousarray(scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise InvalidArgumentError("scores must be one-dimensional")
        if mode == "classification":
            if candidates is None:
                raise ConfigurationError("classification stream requires candidates")
            candidates = np.ascontiguousarray(candidates, dtype=np.float64)
            if candidates.ndim != 2 or candidates.shape[0] != self.scores.shape[0]:
                raise InvalidArgumentError("candidates must have shape (T, K)")
        elif candidates is not None:
            raise ConfigurationError("regression stream cannot carry candidates")
        self.candidates = candidates
        self.mode: Mode = mode

    @classmethod
    def from_rounds(cls, rounds: Sequence[RoundScore]) -> ScoreStream:
        if isinstance(rounds, ScoreStream):
            return rounds
        if len(rounds) == 0:
            return cls(np.empty(0))
        mode = rounds[0].mode
        scores = np.array([rs.s_true for rs in rounds], dtype=float)
        if mode == "classification":
            cands = np.array([rs.candidates for rs in rounds], dtype=float)
            return cls(scores, cands, mode)
        return cls(scores, None, mode)

    def __len__(self) -> int:
        return self.scores.shape[0]

    @overload
    def __getitem__(self, i: int) -> RoundScore: ...
    @overload
    def __getitem__(self, i: slice) -> ScoreStream: ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            cands = None if self.candidates is None else self.candidates[i]
            return ScoreStream(self.scores[i], cands, self.mode)
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        cands = None if self.candidates is None else tuple(self.candidates[i].tolist())
        return RoundScore(t=i + 1, s_true=float(self.scores[i]), candidates=cands, mode=self.mode)

    def __iter__(self) -> Iterator[RoundScore]:
        for i in range(len(self)):
            yield self[i]

    def validate(self, score_bound: float) -> None:
        bad = np.flatnonzero(~((self.scores >= 0) & (self.scores <= score_bound)))
        if bad.size:
            i = int(bad[0])
            raise InvalidArgumentError(f"round {i + 1}: score {self.scores[i]} outside [0, {score_bound}]")
        if self.candidates is not None:
            for rs in self:
                rs.validate(score_bound)

    def set_sizes(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        """Vectorised :func:`prediction_set_size` over the whole stream."""
        r = np.asarray(r, dtype=float)
        if self.mode == "classification":
            return (self.candidates <= r[:, None]).sum(axis=1).astype(float)
        return 2.0 * np.maximum(r, 0.0)


@dataclass(frozen=True)
class StepRecord:
    t: int
    r_played: float
    s_true: float
    e_true: int
    e_obs: int
    z: int
    set_size: float
    in_range: int
    is_training: int


TRACE_COLUMNS = ("r", "s", "e_true", "e_obs", "z", "set_size", "in_range", "is_training", "q", "w")


@dataclass
class RunTrace:
    """Per-step record of one trial, stored column-wise.

    ``q`` holds the effective corruption prediction on compensated rounds
    (AC-ROCP only, zero elsewhere) and ``w`` the compensation actually applied.
    """

    config: CalibrationConfig
    r: NDArray[np.float64]
    s: NDArray[np.float64]
    e_true: NDArray[np.int8]
    e_obs: NDArray[np.int8]
    z: NDArray[np.int8]
    set_size: NDArray[np.float64]
    in_range: NDArray[np.int8]
    is_training: NDArray[np.int8]
    r_final: float
    q: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    w: NDArray[np.float64] = field(default=None)  # type: ignore[assignment]
    algorithm: str = ""

    def __post_init__(self) -> None:
        n = len(self.r)
        if self.q is None:
            self.q = np.zeros(n)
        if self.w is None:
            self.w = np.zeros(n)
        for name in TRACE_COLUMNS:
            if len(getattr(self, name)) != n:
                raise InvalidArgumentError(f"trace column {name!r} has wrong length")

    def __len__(self) -> int:
        return len(self.r)

    @property
    def steps(self) -> list[StepRecord]:
        return [
            StepRecord(
                t=i + 1,
                r_played=float(self.r[i]),
                s_true=float(self.s[i]),
                e_true=int(self.e_true[i]),
                e_obs=int(self.e_obs[i]),
                z=int(self.z[i]),
                set_size=float(self.set_size[i]),
                in_range=int(self.in_range[i]),
                is_training=int(self.is_training[i]),
            )
            for i in range(len(self))
        ]


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"non-finite input {v!r}")


def coverage_indicator(r: float, s: float) -> int:
    """Miscoverage indicator: 1 iff the threshold falls strictly below the score."""
    _check_finite(r, s)
    return int(r < s)


def quantile_gradient(alpha: float, e: int) -> float:
    """Subgradient of the (1 - alpha) quantile loss at the played threshold."""
    return alpha - e


def prediction_set_size(round_: RoundScore, r: float) -> float:
    """Size of ``{y : S(x, y) <= r}``.

    Classification counts candidate labels; regression returns the width
    ``2 * max(r, 0)`` of the symmetric interval around the point prediction.
    """
    if round_.mode == "classification":
        if round_.candidates is None:
            raise ConfigurationError(f"round {round_.t}: classification round without candidates")
        return float(sum(1 for c in round_.candidates if c <= r))
    return 2.0 * max(r, 0.0)
