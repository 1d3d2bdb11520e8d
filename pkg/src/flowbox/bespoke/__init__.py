"""Few-step solver distillation with learned time and scale transforms."""

from .core import (
    BespokeConfig,
    BespokeDivergence,
    BespokeParams,
    GroundTruth,
    bespoke_loss,
    bespoke_sample,
    bespoke_step,
    end_state_rmse,
    generate_gt,
    interp_checkpoints,
    time_reparam,
    train_bespoke,
)

__all__ = [
    "BespokeConfig", "BespokeDivergence", "BespokeParams", "GroundTruth", "bespoke_loss", "bespoke_sample",
    "bespoke_step", "end_state_rmse", "generate_gt", "interp_checkpoints", "time_reparam", "train_bespoke",
]
