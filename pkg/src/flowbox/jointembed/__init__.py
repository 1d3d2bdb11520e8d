"""Contrastive joint embedding of frame sequences and descriptions."""

from .model import (
    JointEmbedConfig,
    JointEmbedder,
    JointTrainConfig,
    SequenceEncoder,
    TextEncoder,
    contrastive_loss,
    embed_utterances,
    rerank,
    retrieval_metrics,
    train_joint_embedder,
    unique_by_description,
    write_retrieval_csv,
)

__all__ = [
    "JointEmbedConfig", "JointEmbedder", "JointTrainConfig", "SequenceEncoder", "TextEncoder",
    "contrastive_loss", "embed_utterances", "rerank", "retrieval_metrics", "train_joint_embedder",
    "unique_by_description", "write_retrieval_csv",
]
