"""Run orchestration: configs, training loops, checkpoints, metrics, plots, CLI."""

from .checkpoint import CheckpointError, config_hash, join_sections, load_checkpoint, save_checkpoint, split_sections
from .config import MODES, ConfigError, RunConfig, load_config, validate
from .metrics import MetricsWriter, energy_distance, median_bandwidth, mmd2, read_metrics
from .plots import plot_report
from .train import (
    AudioBatchSpec,
    TrainConfig,
    duration_mask_spec,
    eval_audio_loss,
    make_audio_batch,
    train_audio_fm,
    train_duration,
    train_mixture_fm,
)

__all__ = [
    "AudioBatchSpec", "CheckpointError", "ConfigError", "MODES", "MetricsWriter", "RunConfig", "TrainConfig",
    "config_hash", "duration_mask_spec", "energy_distance", "eval_audio_loss", "join_sections",
    "load_checkpoint", "load_config", "make_audio_batch", "median_bandwidth", "mmd2", "plot_report",
    "read_metrics", "save_checkpoint", "split_sections", "train_audio_fm", "train_duration",
    "train_mixture_fm", "validate",
]
