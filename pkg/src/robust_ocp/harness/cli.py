"""Command line entry point: ``robust-ocp run | sweep | check-bounds``.

Exit codes: 0 success, 1 error, 2 usage error, 3 bound violation, 4 no trials.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..analysis import PATHWISE, evaluate_bounds
from ..calibrators import ALGORITHMS, AcrocpCalibrator
from ..core import RunTrace
from ..predictors import oracle_correction
from .config import ExperimentConfig, from_mapping, parse_lines, read_config_file
from .experiment import (
    BoundViolationError,
    _corollary_inputs,
    bounds_for,
    preset_configs,
    run_experiments,
    sweep_configs,
    sweep_table,
)
from .outputs import OutputError, read_trace_columns, write_summary, write_table

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_VIOLATION, EXIT_EMPTY = 0, 1, 2, 3, 4

log = logging.getLogger("robust_ocp")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--preset", help="named preset (fig2_iid_sweep, fig6_p_sweep, fig7_interval_sweep, fig8_memory_sweep)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out", help="output directory (summary.json, table.csv)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-ocp", description="Online conformal prediction under corrupted feedback")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment or every member of a preset")
    _common(run)
    sw = sub.add_parser("sweep", help="vary one config key over a list of values")
    _common(sw)
    sw.add_argument("--key", required=True, help="dotted config key, e.g. channel.p")
    sw.add_argument("--values", required=True, help="comma-separated values")
    cb = sub.add_parser("check-bounds", help="re-evaluate bounds on stored trace CSVs")
    cb.add_argument("traces", nargs="+", help="trace CSV files")
    cb.add_argument("--config", help="config the traces were produced with")
    cb.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    cb.add_argument("--alpha", type=float)
    cb.add_argument("--eta", type=float)
    cb.add_argument("--algorithm", choices=ALGORITHMS)
    cb.add_argument("--out", help="write the bound reports as JSON here")
    return ap


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    flat: dict[str, str] = {}
    if getattr(args, "config", None):
        flat.update(read_config_file(args.config))
    flat.update(parse_lines(args.set, "--set"))
    for flag, key in (("alpha", "calibration.alpha"), ("eta", "calibration.eta"), ("horizon", "calibration.horizon"),
                      ("algorithm", "algorithm"), ("trials", "n_trials"), ("seed", "base_seed"),
                      ("parallelism", "parallelism")):
        v = getattr(args, flag, None)
        if v is not None:
            flat[key] = str(v)
    return flat


def _configs(args: argparse.Namespace) -> list[ExperimentConfig]:
    flat = _overrides(args)
    out = Path(args.out) if args.out else None
    if args.preset:
        return preset_configs(args.preset, flat, out)
    if out is not None:
        flat.setdefault("outputs.summary_path", str(out / "summary.json"))
        flat.setdefault("outputs.table_path", str(out / "per_step.csv"))
    return [from_mapping(flat)]


def _report(results) -> int:
    empty = False
    for res in results:
        s = res.summary
        name = s["config"].get("name") or s["config"]["algorithm"]
        if s["n_trials"] == 0:
            print(f"{name}: no trials")
            empty = True
            continue
        f = s["final"]
        line = (f"{name}: trials={s['n_trials']} coverage={f['coverage']['mean']:.4f} "
                f"set_size={f['set_size']['mean']:.4f} miscov={f['miscov']['mean']:.5f}")
        for bname, b in sorted(s.get("bounds", {}).items()):
            line += f" {bname}:{b['violations']}/{b['n_evaluated']}"
        print(line)
    return EXIT_EMPTY if empty else EXIT_OK


def cmd_run(args) -> int:
    results = run_experiments(_configs(args))
    if args.out and (args.preset or len(results) > 1):
        write_table(sweep_table(results), Path(args.out) / "table.csv")
    return _report(results)


def cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError("--values is empty")
    configs = []
    for base in _configs(args):
        configs += sweep_configs(base, args.key, values)
    results = run_experiments(configs)
    if args.out:
        write_table(sweep_table(results, args.key), Path(args.out) / "table.csv")
    return _report(results)


def replay_trace(cols: dict[str, np.ndarray], cfg: ExperimentConfig) -> RunTrace:
    """Rebuild a :class:`RunTrace` from trace columns, recomputing AC-ROCP's q/w.

    The calibrator is replayed on the stored ``e_obs`` feedback; its played
    thresholds must reproduce the stored ``r`` column exactly.
    """
    T = len(cols["t"])
    calib = replace(cfg.calibration, horizon=T)
    q = np.zeros(T)
    w = np.zeros(T)
    r_final = float(cols["r"][-1]) if T else calib.r_init
    if cfg.algorithm == "acrocp":
        setup = cfg.trial_setup()
        ac = AcrocpCalibrator(calib, cfg.schedule, setup.predictor, setup.W)
        for i in range(T):
            t = i + 1
            r = ac.play(t)
            if r != cols["r"][i]:
                raise ValueError(f"trace round {t}: replayed threshold {r!r} differs from stored {cols['r'][i]!r}; "
                                 "config does not match the trace")
            e_obs = int(cols["e_obs"][i])
            corr = float(oracle_correction(e_obs, int(cols["z"][i]))) if setup.correction == "oracle" else None
            info = ac.feedback(t, e_obs, corr)
            q[i], w[i] = info.q, info.w
        r_final = ac.state.h
    return RunTrace(config=calib, r=cols["r"], s=cols["s"], e_true=cols["e_true"], e_obs=cols["e_obs"],
                    z=cols["z"], set_size=cols["set_size"], in_range=cols["in_range"],
                    is_training=cols["is_training"], r_final=r_final, q=q, w=w, algorithm=cfg.algorithm)


def cmd_check_bounds(args) -> int:
    cfg = from_mapping(_overrides(args))
    W = cfg.trial_setup().W if cfg.algorithm == "acrocp" else None
    reports = {}
    violated = False
    for path in args.traces:
        cols = read_trace_columns(path)
        if len(cols["t"]) == 0:
            print(f"{path}: empty trace")
            return EXIT_EMPTY
        trace = replay_trace(cols, cfg)
        p_hat = None
        if cfg.algorithm == "acrocp" and cfg.predictor.kind == "kt":
            tr = trace.is_training.astype(bool)
            p_hat = float(min((0.5 + trace.z[tr].sum()) / (tr.sum() + 1), cfg.predictor.gamma))
        rep = evaluate_bounds(trace, W, bounds_for(cfg), _corollary_inputs(cfg, p_hat))
        reports[path] = rep.to_dict()
        bad = [n for n, e in rep.entries.items() if n in PATHWISE and not e.holds]
        violated |= bool(bad)
        status = "VIOLATED " + ",".join(bad) if bad else "ok"
        detail = " ".join(f"{n}={e.rhs:.6g}" for n, e in sorted(rep.entries.items()))
        print(f"{path}: MisCov={rep.miscov_observed:.6g} {detail} {status}")
    if args.out:
        write_summary({"config": cfg.echo(), "reports": reports}, args.out)
    return EXIT_VIOLATION if violated else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "check-bounds": cmd_check_bounds}
    try:
        return handlers[args.command](args)
    except BoundViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except argparse.ArgumentTypeError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OutputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
