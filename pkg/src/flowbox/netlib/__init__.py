"""Model building blocks: ALiBi transformer, UNet skips, cross-attention, LoRA."""

from .attention import AlibiBias, MultiHeadAttention, alibi_bias, alibi_slopes
from .embeddings import VelocityMLP, VelocityMLPConfig, sinusoidal_embed
from .lora import LoRALinear, iter_modules, lora_wrap
from .module import MLP, Embedding, LayerNorm, Linear, Module, l2_normalize
from .transformer import (
    Transformer,
    TransformerConfig,
    TransformerLayer,
    VoicePromptEncoder,
    VoicePromptEncoderConfig,
)

__all__ = [
    "AlibiBias", "Embedding", "LayerNorm", "Linear", "LoRALinear", "MLP", "Module",
    "MultiHeadAttention", "Transformer", "TransformerConfig", "TransformerLayer",
    "VelocityMLP", "VelocityMLPConfig", "VoicePromptEncoder", "VoicePromptEncoderConfig",
    "alibi_bias", "alibi_slopes", "iter_modules", "l2_normalize", "lora_wrap", "sinusoidal_embed",
]
