"""Flow-matching core: paths, masks, conditioning, guidance, durations, infilling."""

from .conditioning import (
    FRAME_RATE,
    CondArrays,
    ConditionBundle,
    DropoutPolicy,
    FeatureSequence,
    build_pseudo_transcript,
    bundle_from_utterance,
    collate,
    empty_caption,
    pad_silence,
    pseudo_voice_prompt,
    sample_condition_dropout,
    trim_silence,
)
from .duration import (
    DurationModel,
    DurationModelConfig,
    average_durations,
    sample_duration_draws,
    sample_durations,
)
from .guidance import SOUND_WEIGHT, SPEECH_WEIGHT, CFGConfig, cfg_field
from .infill import build_field, generate_infill, splice
from .masking import MaskSpec, finetune_mask_spec, pretrain_mask_spec, sample_mask, sample_masks
from .models import AudioFlowModel, AudioModelConfig, assemble_speech_conditioning, model_field
from .paths import EmptyMaskWarning, OTPathConfig, fm_masked_loss, masked_mse, ot_interpolate

__all__ = [
    "AudioFlowModel", "AudioModelConfig", "CFGConfig", "CondArrays", "ConditionBundle", "DropoutPolicy",
    "DurationModel", "DurationModelConfig", "EmptyMaskWarning", "FRAME_RATE", "FeatureSequence", "MaskSpec",
    "OTPathConfig", "SOUND_WEIGHT", "SPEECH_WEIGHT", "assemble_speech_conditioning", "average_durations",
    "build_field", "build_pseudo_transcript", "bundle_from_utterance", "cfg_field", "collate",
    "empty_caption", "finetune_mask_spec", "fm_masked_loss", "generate_infill", "masked_mse",
    "model_field", "ot_interpolate", "pad_silence", "pretrain_mask_spec", "pseudo_voice_prompt",
    "sample_condition_dropout", "sample_duration_draws", "sample_durations", "sample_mask",
    "sample_masks", "splice", "trim_silence",
]
