"""Monte Carlo toolkit for twin-beam bit encoding with thermal noise signals.

Modules: ``sources`` (photon-number laws), ``channel`` (detection and
closed-form predictions), ``estimators`` (batch statistics, bootstrap),
``discrimination`` (thresholds, ROC, key decoding), ``adversary``
(intercept-resend), ``calibration`` (pulse-height spectra), ``cli``.
"""
from .errors import (
    CalibrationError,
    ConfigError,
    NotSuperPoissonianError,
    ParameterError,
    UndefinedStatisticError,
)
from .sources import SourceParams
from .channel import ChannelParams, Dataset, ShotRecord, generate_dataset, predict_R
from .estimators import BatchStats, StatSummary, batch_stats, bootstrap_batches, summarize

__version__ = "0.1.0"
