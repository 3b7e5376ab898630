"""Feedback corruption channels.

A channel maps the true miscoverage indicator ``e`` to the observed one
``e ^ z`` and reports the flip indicator ``z`` for oracle-side analysis.

Kinds:

* ``ideal``  -- ``z = 0`` always.
* ``iid``    -- ``z ~ Bern(p)`` independently.
* ``markov`` -- two-state chain with transition probabilities ``p01``/``p10``,
  started from its stationary law.
* ``budget`` -- deterministic adversary flipping at most ``f_budget`` entries
  per frame of length ``delta`` relative to the frame's first entry.

Randomised channels draw exactly one uniform per round from a counter-based
Philox generator keyed by the trial seed, so :class:`Channel` (streaming, one
trial) and :class:`ChannelBank` (vectorised, many trials) produce identical
flip sequences.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .core import ConfigurationError, InvalidArgumentError, ProtocolError

ChannelKind = Literal["ideal", "iid", "markov", "budget"]
BudgetPolicy = Literal["burst", "greedy_drift"]

CHANNEL_STREAM_TAG = 0x0C4A


@dataclass(frozen=True)
class ChannelSpec:
    kind: ChannelKind = "ideal"
    p: float = 0.0
    p01: float = 0.0
    p10: float = 0.0
    delta: int = 1
    f_budget: int = 0
    policy: BudgetPolicy = "burst"

    def __post_init__(self) -> None:
        if self.kind == "iid":
            if not 0.0 <= self.p < 0.5:
                raise ConfigurationError(f"iid channel needs 0 <= p < 0.5, got {self.p}")
        elif self.kind == "markov":
            if not (0.0 < self.p01 <= 1.0 and 0.0 < self.p10 <= 1.0):
                raise ConfigurationError(f"markov channel needs p01, p10 in (0, 1], got {self.p01}, {self.p10}")
        elif self.kind == "budget":
            if self.delta < 1:
                raise ConfigurationError(f"budget channel needs delta >= 1, got {self.delta}")
            if not 0 <= self.f_budget <= self.delta:
                raise ConfigurationError(f"budget channel needs 0 <= f_budget <= delta, got {self.f_budget}")
            if self.policy not in ("burst", "greedy_drift"):
                raise ConfigurationError(f"unknown budget policy {self.policy!r}")
        elif self.kind != "ideal":
            raise ConfigurationError(f"unknown channel kind {self.kind!r}")

    @property
    def flip_rate(self) -> float:
        """Long-run flip probability (``p`` for iid, ``pi1`` for markov)."""
        if self.kind == "iid":
            return self.p
        if self.kind == "markov":
            return markov_stationary(self.p01, self.p10)[1]
        return 0.0


def channel_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, CHANNEL_STREAM_TAG])))


def markov_stationary(p01: float, p10: float) -> tuple[float, float]:
    total = p01 + p10
    if total <= 0:
        raise InvalidArgumentError("p01 + p10 must be positive")
    return p10 / total, p01 / total


def markov_memory_length(p01: float, p10: float) -> float:
    """Relaxation time ``1 / (p01 + p10)`` of the two-state chain."""
    total = p01 + p10
    if total <= 0:
        raise InvalidArgumentError("p01 + p10 must be positive")
    return 1.0 / total


def budget_frame_variation(z_window: Sequence[int]) -> int:
    """Number of entries in a frame that differ from the frame's first entry."""
    if len(z_window) == 0:
        return 0
    first = z_window[0]
    return sum(1 for z in z_window if z != first)


def _budget_flip(spec: ChannelSpec, pos: int, e_true, used):
    """Flip decision of the budget adversary at frame position ``pos``.

    The frame-start entry is always 0.  ``burst`` corrupts positions
    ``1..f_budget``; ``greedy_drift`` spends its budget on covered rounds,
    turning true coverage into reported miscoverage.
    """
    if pos == 0:
        return np.zeros_like(used)
    if spec.policy == "burst":
        return np.full_like(used, 1 if pos <= spec.f_budget else 0)
    return ((np.asarray(e_true) == 0) & (used < spec.f_budget)).astype(used.dtype)


class Channel:
    """Streaming corruption channel for a single trial."""

    def __init__(self, spec: ChannelSpec, seed: int = 0) -> None:
        self.spec = spec
        self.seed = seed
        self.rng = channel_rng(seed)
        self.z_prev = 0
        self.frame_pos = 0
        self.switches_used = 0
        self._t = 0

    def corrupt(self, e_true: int, t: int) -> tuple[int, int]:
        if t <= self._t:
            raise ProtocolError(f"channel rounds must increase: got t={t} after t={self._t}")
        if t != self._t + 1 and self.spec.kind in ("markov", "budget"):
            raise ProtocolError(f"{self.spec.kind} channel cannot skip rounds (t={t} after {self._t})")
        spec = self.spec
        if spec.kind == "ideal":
            z = 0
        elif spec.kind == "iid":
            z = int(self.rng.random() < spec.p)
        elif spec.kind == "markov":
            u = self.rng.random()
            if t == 1:
                z = int(u < markov_stationary(spec.p01, spec.p10)[1])
            elif self.z_prev == 0:
                z = int(u < spec.p01)
            else:
                z = int(u >= spec.p10)
        else:
            self.frame_pos = (t - 1) % spec.delta
            if self.frame_pos == 0:
                self.switches_used = 0
            z = int(_budget_flip(spec, self.frame_pos, e_true, np.int64(self.switches_used)))
            self.switches_used += z
            assert self.switches_used <= spec.f_budget, "budget adversary exceeded its frame budget"
        self.z_prev = z
        self._t = t
        return e_true ^ z, z


class ChannelBank:
    """Vectorised channels for a batch of trials, one seed per trial.

    Non-adaptive kinds precompute the whole flip matrix; the budget adversary
    is evaluated round by round because ``greedy_drift`` reacts to ``e_true``.
    """

    def __init__(self, spec: ChannelSpec, seeds: Sequence[int], horizon: int) -> None:
        self.spec = spec
        self.n = len(seeds)
        self.horizon = horizon
        self._used = np.zeros(self.n, dtype=np.int64)
        self.z: NDArray[np.int8] | None = None
        if spec.kind == "ideal":
            self.z = np.zeros((self.n, horizon), dtype=np.int8)
        elif spec.kind in ("iid", "markov"):
            u = np.empty((self.n, horizon))
            for i, seed in enumerate(seeds):
                u[i] = channel_rng(seed).random(horizon)
            if spec.kind == "iid":
                self.z = (u < spec.p).astype(np.int8)
            else:
                self.z = _markov_path(u, spec.p01, spec.p10)

    def corrupt(self, e_true: NDArray[np.int8], t: int) -> tuple[NDArray[np.int8], NDArray[np.int8]]:
        if self.z is not None:
            z = self.z[:, t - 1]
        else:
            pos = (t - 1) % self.spec.delta
            if pos == 0:
                self._used[:] = 0
            z = _budget_flip(self.spec, pos, e_true, self._used).astype(np.int8)
            self._used += z
            assert np.all(self._used <= self.spec.f_budget), "budget adversary exceeded its frame budget"
        return e_true ^ z, z


def _markov_path(u: NDArray[np.float64], p01: float, p10: float) -> NDArray[np.int8]:
    z = np.empty(u.shape, dtype=np.int8)
    z[:, 0] = u[:, 0] < markov_stationary(p01, p10)[1]
    for t in range(1, u.shape[1]):
        prev = z[:, t - 1] == 1
        z[:, t] = np.where(prev, u[:, t] >= p10, u[:, t] < p01)
    return z
