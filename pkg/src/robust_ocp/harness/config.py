"""Experiment configuration: flat ``dotted.key=value`` text plus overrides.

A config file is one assignment per line::

    algorithm=acrocp
    channel.kind=iid
    channel.p=0.2
    schedule.kind=prefix
    schedule.size_P=50
    predictor.kind=kt
    stream.generator=uniform
    n_trials=100

Blank lines and ``#`` comments are ignored.  Later assignments win, so CLI
overrides are simply appended after the file's contents.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..calibrators import ALGORITHMS, TrainingSchedule
from ..core import CalibrationConfig, ConfigurationError
from ..corruption import ChannelSpec
from ..predictors import DEFAULT_GAMMA, PredictorState
from .engine import TrialSetup
from .streams import StreamSpec


@dataclass(frozen=True)
class PredictorSpec:
    """Predictor choice for AC-ROCP.

    ``p_known`` defaults to the channel's long-run flip rate for the oracle
    predictor.  ``correction="oracle"`` bypasses the predictor and feeds the
    ideal correction computed from the true flips (oracle-side experiments).
    """

    kind: str = "kt"
    p_known: float | None = None
    gamma: float = DEFAULT_GAMMA
    w_bound: float | None = None
    correction: str = "predictor"


@dataclass(frozen=True)
class OutputSpec:
    trace_path: str | None = None    # may contain {trial}
    summary_path: str | None = None
    table_path: str | None = None
    dump_path: str | None = None     # offending trace on a bound violation
    bounds: tuple[str, ...] | None = None   # None: defaults for the channel


@dataclass(frozen=True)
class ExperimentConfig:
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    algorithm: str = "ocp"
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    stream: StreamSpec = field(default_factory=StreamSpec)
    n_trials: int = 100
    base_seed: int = 0
    parallelism: int = 1
    outputs: OutputSpec = field(default_factory=OutputSpec)
    delta: float = 0.05   # confidence level of the high-probability corollaries
    name: str = ""

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.n_trials < 0:
            raise ConfigurationError("n_trials must be >= 0")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.algorithm == "acrocp" and self.predictor.correction == "predictor":
            if self.predictor.kind in ("kt", "sense_hold") and self.schedule.kind == "none":
                raise ConfigurationError(f"predictor {self.predictor.kind} needs a training schedule")
        self.trial_setup()

    def trial_setup(self) -> TrialSetup:
        pred = self.predictor
        if self.algorithm == "acrocp":
            p_known = pred.p_known
            if pred.kind == "oracle" and p_known is None:
                p_known = self.channel.flip_rate
            state = PredictorState(kind=pred.kind, p_known=p_known or 0.0, gamma=pred.gamma)
        else:
            state = PredictorState()
        return TrialSetup(self.algorithm, self.calibration, self.channel, self.schedule, state,
                          pred.w_bound, pred.correction)

    def echo(self) -> dict[str, object]:
        """Config as flat keys, without execution-only settings (parallelism, paths)."""
        flat = to_mapping(self)
        return {k: v for k, v in flat.items() if k != "parallelism" and not k.startswith("outputs.")
                or k == "outputs.bounds"}


_SECTIONS = {
    "calibration": CalibrationConfig,
    "channel": ChannelSpec,
    "schedule": TrainingSchedule,
    "predictor": PredictorSpec,
    "stream": StreamSpec,
    "outputs": OutputSpec,
}
_TOP = {"algorithm": str, "n_trials": int, "base_seed": int, "parallelism": int, "delta": float, "name": str}
_ALIASES = {"calibration.B": "calibration.score_bound", "alpha": "calibration.alpha", "eta": "calibration.eta",
            "horizon": "calibration.horizon", "T": "calibration.horizon", "trials": "n_trials", "seed": "base_seed"}


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(cls)}


def _coerce(key: str, raw: object, typ: str) -> object:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    optional = "None" in typ
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float") or typ == "float | None":
            return float(text)
        if typ.startswith("tuple"):
            return tuple(x.strip() for x in text.split(",") if x.strip())
        if typ.startswith("bool"):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return text


def parse_lines(lines: Iterable[str], origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_lines(text.splitlines(), str(path))


def from_mapping(flat: Mapping[str, object], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from dotted keys applied on top of ``base`` (defaults if omitted)."""
    cfg = base or ExperimentConfig()
    sections: dict[str, dict[str, object]] = {}
    top: dict[str, object] = {}
    for key, raw in flat.items():
        key = _ALIASES.get(key, key)
        if key in _TOP:
            top[key] = _coerce(key, raw, _TOP[key].__name__)
            continue
        sec, _, name = key.partition(".")
        if sec not in _SECTIONS or not name:
            raise ConfigurationError(f"unknown config key {key!r}")
        if sec == "stream" and name.startswith("params."):
            sections.setdefault(sec, {}).setdefault("params", dict(cfg.stream.params))[name[7:]] = _coerce(key, raw, "float")
            continue
        types = _field_types(_SECTIONS[sec])
        if name not in types or name == "params":
            raise ConfigurationError(f"unknown config key {key!r}")
        sections.setdefault(sec, {})[name] = _coerce(key, raw, types[name])
    kwargs: dict[str, object] = dict(top)
    for sec, vals in sections.items():
        try:
            kwargs[sec] = replace(getattr(cfg, sec), **vals)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{sec}: {exc}") from exc
    try:
        return replace(cfg, **kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def to_mapping(cfg: ExperimentConfig) -> dict[str, object]:
    """Inverse of :func:`from_mapping` (typed values, sorted keys)."""
    out: dict[str, object] = {k: getattr(cfg, k) for k in _TOP}
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "params":
                for pk, pv in sorted(obj.resolved_params().items() if obj.source == "synthetic" else ()):
                    out[f"stream.params.{pk}"] = pv
            else:
                out[f"{sec}.{f.name}"] = list(v) if isinstance(v, tuple) else v
    return dict(sorted(out.items()))
