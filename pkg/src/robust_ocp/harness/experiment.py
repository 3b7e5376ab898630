"""Trial orchestration, bound checking, sweeps and presets.

Trials are processed in fixed chunks of :data:`CHUNK` consecutive seeds.  Each
chunk is reduced to a :class:`~robust_ocp.analysis.TraceAccumulator` plus its
per-trial bound reports, and chunks are merged strictly in chunk order.  The
chunking never depends on ``parallelism``, so the summary is byte-identical
whether chunks run in one process or in a pool.
"""

from __future__ import annotations

import math
import tempfile
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..analysis import PATHWISE, BoundReport, TraceAccumulator, evaluate_bounds
from ..core import ConfigurationError, ScoreStream
from .config import ExperimentConfig, from_mapping
from .engine import simulate
from .outputs import table_rows, write_per_step_table, write_summary, write_table, write_trace
from .streams import load_stream

CHUNK = 50
GROUP = 8


class BoundViolationError(RuntimeError):
    """A deterministic (pathwise) bound failed on some trial."""

    def __init__(self, message: str, dump_path: str | None = None) -> None:
        super().__init__(message, dump_path)
        self.dump_path = dump_path

    def __str__(self) -> str:
        return self.args[0]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: dict
    reports: list[BoundReport]


# -- bounds per configuration ----------------------------------------------------------


def default_bounds(cfg: ExperimentConfig) -> tuple[str, ...]:
    """Corollaries whose assumptions the configuration satisfies."""
    ch, alg = cfg.channel, cfg.algorithm
    if ch.kind == "iid":
        if alg == "ocp":
            return ("c31",)
        if alg == "frocp":
            return ("c41",)
        if (alg == "acrocp" and cfg.predictor.kind == "kt" and cfg.predictor.correction == "predictor"
                and cfg.schedule.kind == "prefix" and ch.p > 0):
            return ("c51",)
    if ch.kind == "budget":
        if alg == "ocp":
            return ("c32",)
        if alg == "frocp":
            return ("c42",)
        if (alg == "acrocp" and cfg.predictor.kind == "sense_hold" and cfg.predictor.correction == "predictor"
                and cfg.schedule.kind == "periodic" and cfg.schedule.delta == ch.delta):
            return ("c52",)
    return ()


def bounds_for(cfg: ExperimentConfig) -> tuple[str, ...]:
    return default_bounds(cfg) if cfg.outputs.bounds is None else tuple(cfg.outputs.bounds)


def _corollary_inputs(cfg: ExperimentConfig, p_hat: float | None) -> dict[str, float]:
    ch = cfg.channel
    inputs: dict[str, float] = {"delta": cfg.delta}
    if ch.kind in ("iid", "markov"):
        inputs["p"] = ch.flip_rate
    if ch.kind == "budget":
        inputs.update(interval=ch.delta, f_budget=ch.f_budget)
    if p_hat is not None:
        inputs["p_hat"] = p_hat
    return inputs


def _dump_path(cfg: ExperimentConfig, trial: int) -> Path:
    if cfg.outputs.dump_path:
        return Path(cfg.outputs.dump_path.format(trial=trial))
    if cfg.outputs.summary_path:
        return Path(cfg.outputs.summary_path).parent / f"violation_trial{trial}.csv"
    return Path(tempfile.gettempdir()) / f"robust_ocp_violation_trial{trial}.csv"


# -- chunk worker ------------------------------------------------------------------------

_STREAM_CACHE: dict[tuple[str, float], ScoreStream] = {}


def _fixed_stream(cfg: ExperimentConfig) -> ScoreStream | None:
    if cfg.stream.source != "file":
        return None
    key = (cfg.stream.path, cfg.calibration.score_bound)
    if key not in _STREAM_CACHE:
        _STREAM_CACHE[key] = load_stream(cfg.stream, cfg.calibration.score_bound)
    return _STREAM_CACHE[key]


def run_chunk(configs: Sequence[ExperimentConfig], first_trial: int, n: int):
    """Simulate trials ``first_trial .. first_trial + n - 1`` for configs sharing a stream."""
    c0 = configs[0]
    seeds = [c0.base_seed + i for i in range(first_trial, first_trial + n)]
    results = simulate([c.trial_setup() for c in configs], c0.stream, seeds, _fixed_stream(c0))
    out = []
    for cfg, res in zip(configs, results):
        setup = res.setup
        W = setup.W if setup.algorithm == "acrocp" else None
        p_hats = res.run.p_hat()
        bounds = bounds_for(cfg)
        reports = []
        for k, trace in enumerate(res.traces()):
            trial = first_trial + k
            p_hat = None if p_hats is None else float(p_hats[k])
            rep = evaluate_bounds(trace, W, bounds, _corollary_inputs(cfg, p_hat))
            if p_hat is not None:
                rep.inputs["p_hat"] = p_hat
            failed = [name for name, e in rep.entries.items() if name in PATHWISE and not e.holds]
            if failed:
                path = write_trace(trace, _dump_path(cfg, trial))
                name = failed[0]
                e = rep.entries[name]
                raise BoundViolationError(
                    f"{cfg.algorithm}: pathwise bound {name} violated on trial {trial} (seed {seeds[k]}): "
                    f"MisCov={rep.miscov_observed!r} > rhs={e.rhs!r}; trace dumped to {path}",
                    str(path),
                )
            if cfg.outputs.trace_path:
                write_trace(trace, cfg.outputs.trace_path.format(trial=trial))
            reports.append(rep)
        acc = TraceAccumulator()
        acc.add_arrays(cfg.calibration, res.run.flags["e_true"], res.run.out_size)
        out.append((acc, reports))
    return out


def _run_chunk_args(args):
    return run_chunk(*args)


# -- summary -------------------------------------------------------------------------------


def _stats(v) -> dict[str, float]:
    v = np.asarray(v, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std()) if np.ptp(v) > 0 else 0.0,
            "min": float(v.min()), "max": float(v.max())}


def bound_summary(reports: Sequence[BoundReport], delta: float) -> dict[str, dict]:
    """Violation counts and rhs statistics per bound across trials."""
    out: dict[str, dict] = {}
    names = sorted({n for r in reports for n in r.entries})
    N = len(reports)
    for name in names:
        entries = [r.entries[name] for r in reports if name in r.entries]
        viol = sum(not e.holds for e in entries)
        rec = {
            "pathwise": name in PATHWISE,
            "n_evaluated": len(entries),
            "violations": viol,
            "violation_rate": viol / len(entries),
            "rhs": _stats([e.rhs for e in entries]),
            "min_slack": float(min(e.slack for e in entries)),
        }
        if name not in PATHWISE:
            rec["delta"] = delta
            rec["allowed_rate"] = delta + 3 * math.sqrt(delta * (1 - delta) / N)
        out[name] = rec
    return out


def build_summary(cfg: ExperimentConfig, acc: TraceAccumulator, reports: Sequence[BoundReport]) -> dict:
    s = acc.summary()
    s["config"] = cfg.echo()
    if reports:
        s["bounds"] = bound_summary(reports, cfg.delta)
        p_hats = [r.inputs["p_hat"] for r in reports if "p_hat" in r.inputs]
        if p_hats:
            s["p_hat"] = _stats(p_hats)
        s["miscov_observed"] = _stats([r.miscov_observed for r in reports])
    return s


def _emit(cfg: ExperimentConfig, summary: dict) -> None:
    if cfg.outputs.summary_path:
        write_summary(summary, cfg.outputs.summary_path)
    if cfg.outputs.table_path and summary.get("per_step"):
        write_per_step_table(summary, cfg.outputs.table_path)


# -- drivers ---------------------------------------------------------------------------------


def _share_key(cfg: ExperimentConfig):
    c, st = cfg.calibration, cfg.stream
    params = tuple(sorted(st.params.items()))
    return (st.source, st.path, st.generator, params, st.mode, st.n_candidates,
            c.horizon, c.score_bound, cfg.n_trials, cfg.base_seed)


def run_experiments(configs: Sequence[ExperimentConfig], parallelism: int | None = None,
                    emit: bool = True) -> list[ExperimentResult]:
    """Run several experiments; configs on the same stream share score generation.

    ``parallelism`` defaults to the largest value requested by the configs.
    """
    configs = list(configs)
    if parallelism is None:
        parallelism = max((c.parallelism for c in configs), default=1)
    groups: dict = {}
    for idx, cfg in enumerate(configs):
        groups.setdefault(_share_key(cfg), []).append(idx)
    tasks, owners = [], []
    for idxs in groups.values():
        for g0 in range(0, len(idxs), GROUP):
            members = idxs[g0:g0 + GROUP]
            n_trials = configs[members[0]].n_trials
            for t0 in range(0, n_trials, CHUNK):
                tasks.append(([configs[i] for i in members], t0, min(CHUNK, n_trials - t0)))
                owners.append(members)
    accs = [TraceAccumulator() for _ in configs]
    reports: list[list[BoundReport]] = [[] for _ in configs]

    def fold(members, chunk_out):
        for i, (acc, reps) in zip(members, chunk_out):
            accs[i].merge(acc)
            reports[i].extend(reps)

    if parallelism > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for members, chunk_out in zip(owners, pool.map(_run_chunk_args, tasks)):
                fold(members, chunk_out)
    else:
        for members, task in zip(owners, tasks):
            fold(members, run_chunk(*task))

    results = []
    for i, cfg in enumerate(configs):
        summary = build_summary(cfg, accs[i], reports[i])
        if emit:
            _emit(cfg, summary)
        results.append(ExperimentResult(cfg, summary, reports[i]))
    return results


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return run_experiments([cfg])[0]


# -- sweeps and presets ------------------------------------------------------------------------


def _suffix_path(path: str | None, tag: str) -> str | None:
    if not path:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def sweep_configs(base: ExperimentConfig, key: str, values: Iterable[str]) -> list[ExperimentConfig]:
    """One config per value of the dotted ``key``; output paths get a per-value suffix."""
    out = []
    for v in values:
        cfg = from_mapping({key: v}, base)
        tag = f"{key.replace('.', '_')}={v}"
        o = cfg.outputs
        cfg = replace(cfg, name=cfg.name or tag,
                      outputs=replace(o, summary_path=_suffix_path(o.summary_path, tag),
                                      table_path=_suffix_path(o.table_path, tag),
                                      trace_path=_suffix_path(o.trace_path, tag)))
        out.append(cfg)
    return out


def _markov(M: float) -> dict[str, object]:
    # p01 = p10 gives pi1 = 0.5 and memory length 1 / (p01 + p10) = M
    return {"channel.kind": "markov", "channel.p01": 1 / (2 * M), "channel.p10": 1 / (2 * M)}


_CLS = {"stream.generator": "classification_softmax_like", "stream.mode": "classification",
        "stream.n_candidates": 100}
_ACROCP_KT = {"algorithm": "acrocp", "schedule.kind": "prefix", "schedule.size_P": 50, "predictor.kind": "kt"}
_ACROCP_ORACLE = {"algorithm": "acrocp", "schedule.kind": "prefix", "schedule.size_P": 50,
                  "predictor.kind": "oracle"}
_DESK = {"calibration.horizon": 10_000, "n_trials": 1000}
INTERVALS = (2, 5, 10, 25, 50, 100, 250)
MEMORIES = (25, 100, 400)


def _preset_fig2() -> list[tuple[str, dict]]:
    base = {**_DESK, **_CLS, "channel.kind": "iid", "channel.p": 0.2}
    return [
        ("ocp", {**base, "algorithm": "ocp"}),
        ("frocp", {**base, "algorithm": "frocp"}),
        ("acrocp_kt", {**base, **_ACROCP_KT}),
        ("acrocp_oracle", {**base, **_ACROCP_ORACLE}),
    ]


def _preset_fig6() -> list[tuple[str, dict]]:
    out = []
    for p in (0.1, 0.2, 0.3, 0.4):
        base = {**_DESK, **_CLS, "channel.kind": "iid", "channel.p": p}
        out += [(f"p={p}_ocp", {**base, "algorithm": "ocp"}),
                (f"p={p}_frocp", {**base, "algorithm": "frocp"}),
                (f"p={p}_acrocp_kt", {**base, **_ACROCP_KT})]
    return out


def _sense_hold(M: float, interval: int) -> dict:
    return {**_DESK, **_markov(M), "stream.generator": "gaussian_clipped", "algorithm": "acrocp",
            "schedule.kind": "periodic", "schedule.delta": interval, "predictor.kind": "sense_hold"}


def _preset_fig7() -> list[tuple[str, dict]]:
    base = {**_DESK, **_markov(100), "stream.generator": "gaussian_clipped"}
    out = [("ocp", {**base, "algorithm": "ocp"}), ("frocp", {**base, "algorithm": "frocp"})]
    out += [(f"interval={d}_acrocp", _sense_hold(100, d)) for d in INTERVALS]
    return out


def _preset_fig8() -> list[tuple[str, dict]]:
    return [(f"M={M}_interval={d}_acrocp", _sense_hold(M, d)) for M in MEMORIES for d in INTERVALS]


PRESETS = {
    "fig2_iid_sweep": _preset_fig2,
    "fig6_p_sweep": _preset_fig6,
    "fig7_interval_sweep": _preset_fig7,
    "fig8_memory_sweep": _preset_fig8,
}


def preset_configs(name: str, overrides: dict[str, object] | None = None,
                   out_dir: str | Path | None = None) -> list[ExperimentConfig]:
    """Expand a named preset; ``overrides`` apply to every member."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    configs = []
    for tag, flat in PRESETS[name]():
        flat = {**flat, "name": f"{name}/{tag}", **(overrides or {})}
        if out_dir is not None:
            flat.setdefault("outputs.summary_path", str(Path(out_dir) / f"{tag}.json"))
        configs.append(from_mapping(flat))
    return configs


def sweep_table(results: Sequence[ExperimentResult], sweep_key: str = "") -> list[tuple]:
    rows = []
    for res in results:
        value = res.summary["config"].get(sweep_key, "") if sweep_key else ""
        rows.extend(table_rows(res.summary, sweep_key, value))
    return rows


__all__ = [
    "BoundViolationError", "ExperimentResult", "PRESETS", "bound_summary", "bounds_for", "build_summary",
    "default_bounds", "preset_configs", "run_chunk", "run_experiment", "run_experiments", "sweep_configs",
    "sweep_table", "write_table",
]
