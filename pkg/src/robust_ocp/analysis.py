"""Oracle-side metrics and bound evaluators.

Everything here reads the true indicators ``e`` and flips ``z`` recorded in a
:class:`~robust_ocp.core.RunTrace`; none of it is ever visible to a
calibrator.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import NDArray

from .core import CalibrationConfig, InvalidArgumentError, RunTrace

FLOAT_SLACK = 1e-12

COROLLARIES = ("c31", "c41", "c51", "c32", "c42", "c52")


@dataclass(frozen=True)
class CorruptionCounts:
    """Flip counts of one trace.

    ``G_0to1`` counts covered rounds reported as miscovered (gradient
    ``alpha -> alpha - 1``); ``G_1to0`` the reverse.  The ``G_in_*`` variants
    only count in-range rounds.
    """

    G_total: int
    G_0to1: int
    G_1to0: int
    G_in_0to1: int
    G_in_1to0: int


@dataclass(frozen=True)
class BoundEntry:
    rhs: float
    holds: bool
    slack: float


def bound_entry(rhs: float, observed: float) -> BoundEntry:
    slack = rhs - observed
    return BoundEntry(rhs=rhs, holds=slack >= -FLOAT_SLACK, slack=slack)


@dataclass
class BoundReport:
    miscov_observed: float
    entries: dict[str, BoundEntry] = field(default_factory=dict)
    inputs: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, rhs: float) -> BoundEntry:
        self.entries[name] = entry = bound_entry(rhs, self.miscov_observed)
        return entry

    def to_dict(self) -> dict:
        return {
            "miscov_observed": self.miscov_observed,
            "entries": {k: asdict(v) for k, v in self.entries.items()},
            "inputs": dict(self.inputs),
        }


# -- per-trace metrics ---------------------------------------------------------------


def miscoverage(trace: RunTrace) -> float:
    """``|alpha - mean(e_true)|`` over the whole trace."""
    if len(trace) == 0:
        raise InvalidArgumentError("empty trace")
    return abs(trace.config.alpha - float(np.mean(trace.e_true)))


def corruption_counts(trace: RunTrace) -> CorruptionCounts:
    z = trace.z.astype(bool)
    e = trace.e_true.astype(bool)
    inr = trace.in_range.astype(bool)
    g01 = z & ~e
    g10 = z & e
    return CorruptionCounts(
        G_total=int(z.sum()),
        G_0to1=int(g01.sum()),
        G_1to0=int(g10.sum()),
        G_in_0to1=int((g01 & inr).sum()),
        G_in_1to0=int((g10 & inr).sum()),
    )


def compensated_rounds(trace: RunTrace) -> NDArray[np.bool_]:
    """Rounds where AC-ROCP applied compensation: in-range and not a probe."""
    return trace.in_range.astype(bool) & ~trace.is_training.astype(bool)


# -- deterministic bounds --------------------------------------------------------------


def lemma1_rhs(cfg: CalibrationConfig, T: int) -> float:
    return (cfg.score_bound + cfg.eta) / (cfg.eta * T)


def theorem1_rhs(counts: CorruptionCounts, cfg: CalibrationConfig, T: int) -> float:
    a = cfg.alpha
    return (
        lemma1_rhs(cfg, T)
        + abs(counts.G_0to1 - counts.G_1to0) / T
        + max(a * counts.G_1to0, (1 - a) * counts.G_0to1) / T
    )


def theorem2_rhs(counts: CorruptionCounts, cfg: CalibrationConfig, T: int) -> float:
    return lemma1_rhs(cfg, T) + abs(counts.G_in_0to1 - counts.G_in_1to0) / T


def theorem3_rhs(trace: RunTrace, q_series: NDArray[np.float64], W: float) -> tuple[float, float]:
    """Tight and relaxed AC-ROCP bounds; residuals run over compensated rounds."""
    q = np.asarray(q_series, dtype=float)
    if q.shape != (len(trace),):
        raise InvalidArgumentError(f"q_series has length {q.shape}, trace has {len(trace)}")
    cfg = trace.config
    T = len(trace)
    base = (cfg.score_bound + cfg.eta * (W + 2)) / (cfg.eta * T)
    mask = compensated_rounds(trace)
    diff = trace.z[mask] - q[mask]
    sign = 2.0 * trace.e_obs[mask] - 1.0
    tight = base + abs(float(np.sum(sign * diff))) / T
    relaxed = base + float(np.sum(np.abs(diff))) / T
    return tight, relaxed


def compensation_residual(trace: RunTrace) -> float:
    """``sum (g - g_obs - w)`` over compensated rounds."""
    mask = compensated_rounds(trace)
    g_minus_gbar = trace.e_obs[mask].astype(float) - trace.e_true[mask]
    return float(np.sum(g_minus_gbar - trace.w[mask]))


def ocp_iterate_envelope(trace: RunTrace) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-step OCP iterate envelope using the flip counts of the trace prefix."""
    cfg = trace.config
    z = trace.z.astype(bool)
    e = trace.e_true.astype(bool)
    g01 = np.cumsum(z & ~e)
    g10 = np.cumsum(z & e)
    lower = -cfg.eta * cfg.alpha * (1 + g10)
    upper = cfg.score_bound + cfg.eta * (1 - cfg.alpha) * (1 + g01)
    return lower, upper


def frocp_envelope(cfg: CalibrationConfig) -> tuple[float, float]:
    return -cfg.eta * cfg.alpha, cfg.score_bound + cfg.eta * (1 - cfg.alpha)


def hidden_envelope(cfg: CalibrationConfig, W: float) -> tuple[float, float]:
    return -cfg.eta * (W + 1), cfg.score_bound + cfg.eta * (W + 1)


# -- corollaries ---------------------------------------------------------------------


def f_hat(interval: int, f_budget: float) -> float:
    """Worst-case per-frame imbalance ``max{f, interval - f}``."""
    return max(f_budget, interval - f_budget)


def kt_deviation_bound(n: int, delta: float) -> float:
    """Two-sided Hoeffding radius for the (untruncated) KT estimate from ``n`` samples."""
    return math.sqrt(math.log(2 / delta) / (2 * (n + 1))) + 1 / (2 * (n + 1))


_REQUIRED = {
    "c31": ("B", "eta", "T", "p", "delta"),
    "c41": ("B", "eta", "T", "p", "delta", "I_size"),
    "c51": ("B", "eta", "T", "p", "p_hat", "delta", "I_size", "P_size"),
    "c32": ("B", "eta", "T", "interval", "f_budget"),
    "c42": ("B", "eta", "T", "interval", "f_budget"),
    "c52": ("B", "eta", "T", "interval", "f_budget"),
}


def corollary_rhs(which: str, inputs: Mapping[str, float]) -> float:
    """Right-hand side of one of the specialised corollaries.

    ``inputs`` keys: ``B``, ``eta``, ``T``, ``p``, ``p_hat``, ``delta``
    (confidence level), ``I_size``, ``P_size``, ``interval`` (frame length),
    ``f_budget`` and optionally ``W`` for ``c51``.
    """
    if which not in _REQUIRED:
        raise InvalidArgumentError(f"unknown corollary {which!r}")
    missing = [k for k in _REQUIRED[which] if inputs.get(k) is None]
    if missing:
        raise InvalidArgumentError(f"{which} needs inputs {missing}")
    B, eta, T = inputs["B"], inputs["eta"], inputs["T"]
    base = (B + eta) / (eta * T)
    if which in ("c31", "c41", "c51"):
        delta = inputs["delta"]
        if not 0 < delta < 1:
            raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")
        p = inputs["p"]
    if which == "c31":
        return base + 2 * (p + math.sqrt(math.log(1 / delta) / (2 * T)))
    if which == "c41":
        n_in = inputs["I_size"]
        if n_in == 0:
            return base
        return base + n_in / T * (p + math.sqrt(math.log(1 / delta) / (2 * n_in)))
    if which == "c51":
        n_in, n_p, p_hat = inputs["I_size"], inputs["P_size"], inputs["p_hat"]
        W = inputs.get("W")
        if W is None:
            W = abs(p / (2 * p - 1))
        log4 = math.log(4 / delta)
        h1 = math.sqrt(n_in * log4 / 2) / ((1 - 2 * p) * T)
        h2 = n_in / ((1 - 2 * max(p, p_hat)) ** 2 * T) * (
            math.sqrt(log4 / (2 * (n_p + 1))) + 1 / (2 * (n_p + 1))
        )
        return (B + eta * (W + 2)) / (eta * T) + h1 + h2
    interval, f = inputs["interval"], inputs["f_budget"]
    if which == "c32":
        fh = f_hat(interval, f)
        return base + 2 * fh / interval + 2 * fh / T
    if which == "c42":
        fh = f_hat(interval, f)
        return base + fh / interval + fh / T
    return (B + 3 * eta) / (eta * T) + f / interval + f / T


# -- aggregation ---------------------------------------------------------------------


def running_mean(x: NDArray, axis: int = -1) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    n = np.arange(1, x.shape[axis] + 1)
    return np.cumsum(x, axis=axis) / n


class TraceAccumulator:
    """Streaming per-step mean/std of running coverage and running set size.

    Batches are merged with Chan's pairwise update, so the result depends only
    on the order in which batches are added.
    """

    def __init__(self) -> None:
        self.n = 0
        self.horizon: int | None = None
        self.config: CalibrationConfig | None = None
        self._stats: dict[str, list[NDArray[np.float64]]] = {}
        self.final: dict[str, list[float]] = {"coverage": [], "set_size": [], "miscov": []}

    def add_arrays(self, cfg: CalibrationConfig, e_true: NDArray, set_size: NDArray) -> None:
        e_true = np.atleast_2d(e_true)
        set_size = np.atleast_2d(set_size)
        if self.config is None:
            self.config, self.horizon = cfg, e_true.shape[1]
        elif cfg != self.config or e_true.shape[1] != self.horizon:
            raise InvalidArgumentError("traces must share config and horizon")
        cov = running_mean(1 - e_true.astype(float))
        size = running_mean(set_size)
        for name, x in (("coverage", cov), ("set_size", size)):
            self._merge(name, x)
        self.final["coverage"].extend(cov[:, -1].tolist())
        self.final["set_size"].extend(size[:, -1].tolist())
        self.final["miscov"].extend(np.abs(cfg.alpha - e_true.mean(axis=1)).tolist())
        self.n += e_true.shape[0]

    def add(self, traces: Iterable[RunTrace]) -> None:
        traces = list(traces)
        if not traces:
            return
        cfg = traces[0].config
        if any(tr.config != cfg or len(tr) != len(traces[0]) for tr in traces):
            raise InvalidArgumentError("traces must share config and horizon")
        self.add_arrays(cfg, np.stack([tr.e_true for tr in traces]), np.stack([tr.set_size for tr in traces]))

    def _merge(self, name: str, x: NDArray[np.float64]) -> None:
        mb = x.mean(axis=0)
        stats = [mb, ((x - mb) ** 2).sum(axis=0), x.min(axis=0), x.max(axis=0)]
        self._combine(name, stats, self.n, x.shape[0])

    def _combine(self, name: str, b: list, na: int, nb: int) -> None:
        if name not in self._stats:
            self._stats[name] = list(b)
            return
        ma, m2a, loa, hia = self._stats[name]
        mb, m2b, lo, hi = b
        n = na + nb
        d = mb - ma
        self._stats[name] = [ma + d * (nb / n), m2a + m2b + d * d * (na * nb / n),
                             np.minimum(loa, lo), np.maximum(hia, hi)]

    def merge(self, other: TraceAccumulator) -> None:
        """Fold in another accumulator (e.g. one chunk of trials computed elsewhere)."""
        if other.n == 0:
            return
        if self.config is None:
            self.config, self.horizon = other.config, other.horizon
        elif other.config != self.config or other.horizon != self.horizon:
            raise InvalidArgumentError("traces must share config and horizon")
        for name, stats in other._stats.items():
            self._combine(name, stats, self.n, other.n)
        for name, vals in other.final.items():
            self.final[name].extend(vals)
        self.n += other.n

    def summary(self) -> dict:
        out: dict = {"n_trials": self.n}
        if self.n == 0:
            return out
        per_step = {}
        for name, (mean, m2, lo, hi) in self._stats.items():
            std = np.sqrt(np.maximum(m2, 0.0) / self.n)
            std[lo == hi] = 0.0
            per_step[name] = {"mean": mean, "std": std}
        out["per_step"] = per_step
        final = {}
        for name, vals in self.final.items():
            v = np.asarray(vals)
            final[name] = {"mean": float(v.mean()), "std": float(v.std()) if np.ptp(v) > 0 else 0.0,
                           "min": float(v.min()), "max": float(v.max())}
        out["final"] = final
        return out


def aggregate(traces: Iterable[RunTrace]) -> dict:
    """Per-step mean/std of running coverage and set size plus final metrics."""
    acc = TraceAccumulator()
    acc.add(traces)
    return acc.summary()


# -- per-trace report ----------------------------------------------------------------

PATHWISE = frozenset({"lemma1", "theorem1", "theorem2", "theorem3_tight", "theorem3_relaxed", "c32", "c42", "c52"})


def evaluate_bounds(
    trace: RunTrace,
    W: float | None = None,
    corollaries: Iterable[str] = (),
    corollary_inputs: Mapping[str, float] | None = None,
) -> BoundReport:
    """Evaluate the theorem matching ``trace.algorithm`` plus requested corollaries.

    ``W`` is required for AC-ROCP traces.  Corollary inputs that can be read
    off the trace (``B``, ``eta``, ``T``, ``I_size``, ``P_size``) are filled
    in automatically; the rest come from ``corollary_inputs``.
    """
    cfg = trace.config
    T = len(trace)
    report = BoundReport(miscov_observed=miscoverage(trace))
    counts = corruption_counts(trace)
    alg = trace.algorithm
    if alg == "acrocp":
        I_size = int(compensated_rounds(trace).sum())
    else:
        I_size = int(trace.in_range.sum())
    report.inputs.update(asdict(counts))
    report.inputs.update(I_size=I_size, P_size=int(trace.is_training.sum()), T=T)
    if alg == "ocp_ideal":
        report.add("lemma1", lemma1_rhs(cfg, T))
        report.add("theorem1", theorem1_rhs(counts, cfg, T))
    elif alg == "ocp":
        report.add("theorem1", theorem1_rhs(counts, cfg, T))
    elif alg == "frocp":
        report.add("theorem2", theorem2_rhs(counts, cfg, T))
    elif alg == "acrocp":
        if W is None:
            raise InvalidArgumentError("AC-ROCP bounds need the compensation bound W")
        tight, relaxed = theorem3_rhs(trace, trace.q, W)
        report.inputs["W"] = W
        report.add("theorem3_tight", tight)
        report.add("theorem3_relaxed", relaxed)
    inputs = {"B": cfg.score_bound, "eta": cfg.eta, "T": T, "I_size": I_size,
              "P_size": report.inputs["P_size"]}
    inputs.update(corollary_inputs or {})
    for which in corollaries:
        report.add(which, corollary_rhs(which, inputs))
        for k in _REQUIRED[which]:
            report.inputs.setdefault(k, inputs[k])
    return report
