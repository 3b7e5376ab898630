"""Online conformal prediction under corrupted coverage feedback.

Calibrators (OCP, F-ROCP, AC-ROCP), corruption channels, flip predictors and
evaluators for the deterministic and high-probability miscoverage bounds.
"""

from .analysis import BoundReport, aggregate, corollary_rhs, evaluate_bounds, miscoverage
from .calibrators import (
    AcrocpCalibrator,
    TrainingSchedule,
    acrocp_round,
    frocp_step,
    ocp_step,
    run_calibrator,
)
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
from .corruption import Channel, ChannelSpec
from .predictors import PredictorState

__version__ = "0.1.0"

__all__ = [
    "AcrocpCalibrator", "BoundReport", "CalibrationConfig", "Channel", "ChannelSpec", "ConfigurationError",
    "InvalidArgumentError", "PredictorState", "ProtocolError", "RoundScore", "RunTrace", "ScoreStream",
    "TrainingSchedule", "acrocp_round", "aggregate", "corollary_rhs", "coverage_indicator", "evaluate_bounds",
    "frocp_step", "miscoverage", "ocp_step", "run_calibrator",
]
