"""Corruption predictors and the compensation term used by AC-ROCP.

Three designs are provided: a known-probability oracle, a truncated
Krichevsky-Trofimov (KT) estimate of the flip probability trained on probe
rounds, and a sense-and-hold tracker that latches the last probed flip state.

Note the sign convention: for ``p`` in ``(0, 0.5)`` the optimal prediction
``p / (2p - 1)`` is negative.  This is intended; it makes the expected
residual of the compensated gradient zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .core import ConfigurationError, InvalidArgumentError

PredictorKind = Literal["zero", "oracle", "kt", "sense_hold"]

DEFAULT_GAMMA = 0.45


@dataclass(frozen=True)
class PredictorState:
    kind: PredictorKind = "zero"
    p_known: float = 0.0
    kt_sum: float = 0.0
    kt_count: int = 0
    gamma: float = DEFAULT_GAMMA
    z_held: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "oracle", "kt", "sense_hold"):
            raise ConfigurationError(f"unknown predictor kind {self.kind!r}")
        if not 0.0 < self.gamma < 0.5:
            raise ConfigurationError(f"gamma must lie in (0, 0.5), got {self.gamma}")
        if self.kind == "oracle" and not 0.0 <= self.p_known < 0.5:
            raise ConfigurationError(f"oracle p_known must lie in [0, 0.5), got {self.p_known}")
        if not 0 <= self.kt_sum <= self.kt_count:
            raise ConfigurationError("kt_sum must lie in [0, kt_count]")


def kt_estimate(kt_sum, kt_count, gamma: float = DEFAULT_GAMMA):
    """Truncated KT estimate ``min{(0.5 + k) / (n + 1), gamma}``; array friendly."""
    return np.minimum((0.5 + kt_sum) / (kt_count + 1), gamma)


def q_from_probability(p):
    """Optimal flip prediction ``p / (2p - 1)`` for flip probability ``p``."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr == 0.5):
        raise InvalidArgumentError("prediction is singular at p = 0.5")
    return p / (2 * p - 1)


def predictor_train(state: PredictorState, z: int) -> PredictorState:
    """Feed one recovered flip indicator from a probe round."""
    if state.kind == "kt":
        return replace(state, kt_sum=state.kt_sum + z, kt_count=state.kt_count + 1)
    if state.kind == "sense_hold":
        return replace(state, z_held=int(z))
    return state


def predict_q(state: PredictorState) -> float:
    if state.kind == "zero":
        return 0.0
    if state.kind == "oracle":
        return float(q_from_probability(state.p_known))
    if state.kind == "kt":
        p_hat = float(kt_estimate(state.kt_sum, state.kt_count, state.gamma))
        return float(q_from_probability(p_hat))
    return float(state.z_held)


def default_w_bound(state: PredictorState) -> float:
    """Smallest bound ``W`` with ``|w| <= W`` for every reachable prediction."""
    if state.kind == "zero":
        return 0.0
    if state.kind == "oracle":
        return state.p_known / (1 - 2 * state.p_known)
    if state.kind == "kt":
        return state.gamma / (1 - 2 * state.gamma)
    return 1.0


def compensation(e_obs, q, w_bound: float):
    """Corrective offset ``(2 e_obs - 1) q`` clipped to ``[-w_bound, w_bound]``."""
    if w_bound < 0:
        raise InvalidArgumentError(f"w_bound must be non-negative, got {w_bound}")
    return np.clip((2 * e_obs - 1) * q, -w_bound, w_bound)


def oracle_correction(e_obs, z):
    """The correction that maps the observed gradient exactly onto the true one."""
    return (2 * e_obs - 1) * z
