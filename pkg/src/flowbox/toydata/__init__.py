"""Synthetic corpora with analytically known ground truth."""

from .aligned import (
    NOISES,
    NUM_SPECIAL,
    PITCHES,
    RATES,
    SIL,
    SOUND,
    AlignedCorpusConfig,
    CorpusSplit,
    DescriptionVocab,
    NoEligiblePrompt,
    ToyGenerator,
    ToyUtterance,
    gen_aligned_corpus,
    select_voice_prompt,
)
from .io import CorpusFormatError, load_corpus, load_points, read_frames, save_corpus, save_points, write_frames
from .mixture import MixtureSpec, eight_gaussians, gaussian_1d, gen_mixture, standard_normal

__all__ = [
    "AlignedCorpusConfig", "CorpusFormatError", "CorpusSplit", "DescriptionVocab", "MixtureSpec",
    "NOISES", "NUM_SPECIAL", "NoEligiblePrompt", "PITCHES", "RATES", "SIL", "SOUND", "ToyGenerator",
    "ToyUtterance", "eight_gaussians", "gaussian_1d", "gen_aligned_corpus", "gen_mixture",
    "load_corpus", "load_points", "read_frames", "save_corpus", "save_points", "select_voice_prompt",
    "standard_normal", "write_frames",
]
