"""Communication volume modeling and trace analysis for distributed transformer training."""

from .analytic import (
    Scheme,
    VolumePrediction,
    collective_volume,
    ddp_volume,
    param_count,
    pipeline_volume,
    predict,
    tensor_volume,
    threed_volume,
    zero_volume,
)
from .core import (
    CollectiveEvent,
    CollectiveKind,
    CommSummary,
    CommscopeError,
    ConfigError,
    HeadsNotDivisible,
    LayersNotDivisible,
    ModelConfig,
    NonDivisibleLayout,
    ParallelLayout,
    Phase,
    ZeroStage,
    derive_data_parallel,
    load_fixture,
)
from .schedule import ScheduleOptions, build_schedule, summarize

__version__ = "0.1.0"
