"""Streams, experiment orchestration, outputs and the command line."""

from .config import ExperimentConfig, OutputSpec, PredictorSpec, from_mapping, to_mapping
from .engine import TrialSetup, simulate
from .experiment import (
    PRESETS,
    BoundViolationError,
    ExperimentResult,
    preset_configs,
    run_experiment,
    run_experiments,
    sweep_configs,
)
from .outputs import write_summary, write_trace
from .streams import IngestionError, StreamSpec, load_stream, synth_stream, write_stream

__all__ = [
    "PRESETS", "BoundViolationError", "ExperimentConfig", "ExperimentResult", "IngestionError", "OutputSpec",
    "PredictorSpec", "StreamSpec", "TrialSetup", "from_mapping", "load_stream", "preset_configs",
    "run_experiment", "run_experiments", "simulate", "sweep_configs", "synth_stream", "to_mapping",
    "write_stream", "write_summary", "write_trace",
]
