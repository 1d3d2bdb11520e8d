"""Two-branch contrastive embedder for (frame sequence, description) pairs."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import AdamState, Parameter, Tensor, adam_step, backprop
from flowbox.netlib import MLP, Embedding, Module, l2_normalize

TAU_MIN, TAU_MAX = 1e-3, 100.0


@dataclass
class JointEmbedConfig:
    feat_dim: int = 8
    desc_vocab: int = 15
    hidden: int = 64
    embed_dim: int = 32
    depth: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


def _masked_mean(h: Tensor, mask: np.ndarray) -> Tensor:
    m = np.asarray(mask, dtype=np.float64)[..., None]
    return (h * m).sum(axis=1) * (1.0 / np.maximum(m.sum(axis=1), 1.0))


class SequenceEncoder(Module):
    """Per-frame MLP over [x_t, x_t - x_{t-1}], masked mean pool, projection."""

    def __init__(self, cfg: JointEmbedConfig, rng: np.random.Generator):
        self.frame = MLP(2 * cfg.feat_dim, cfg.hidden, cfg.hidden, cfg.depth, rng)
        self.proj = MLP(cfg.hidden, cfg.hidden, cfg.embed_dim, 1, rng)

    def __call__(self, frames, mask=None) -> Tensor:
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] < 1:
            raise ValueError("empty sequence")
        mask = np.ones(x.shape[:2], bool) if mask is None else np.asarray(mask, bool).reshape(x.shape[:2])
        dx = np.zeros_like(x)
        dx[:, 1:] = x[:, 1:] - x[:, :-1]
        dx[:, 1:] *= mask[:, :-1, None]  # no delta across the padding boundary
        h = self.frame(np.concatenate([x, dx], axis=-1))
        return l2_normalize(self.proj(dc.gelu(_masked_mean(h, mask))))


class TextEncoder(Module):
    """Embedding, positional mix through an MLP, mean pool, projection."""

    def __init__(self, cfg: JointEmbedConfig, rng: np.random.Generator, max_len: int = 8):
        self.emb = Embedding(cfg.desc_vocab, cfg.hidden, rng, scale=0.5)
        self.pos = Embedding(max_len, cfg.hidden, rng, scale=0.1)
        self.mix = MLP(cfg.hidden, cfg.hidden, cfg.embed_dim, cfg.depth, rng)

    def __call__(self, ids, mask=None) -> Tensor:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        mask = np.ones(ids.shape, bool) if mask is None else np.asarray(mask, bool).reshape(ids.shape)
        h = self.emb(ids) + self.pos(np.arange(ids.shape[1]))
        return l2_normalize(self.mix(_masked_mean(h, mask)))


class JointEmbedder(Module):
    def __init__(self, cfg: JointEmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.seq = SequenceEncoder(cfg, rng)
        self.text = TextEncoder(cfg, rng)
        self.log_tau = Parameter(np.zeros(()))  # tau = 1 at init
        self.assign_names()

    def tau(self) -> Tensor:
        return dc.clip(dc.exp(self.log_tau), TAU_MIN, TAU_MAX)

    def encode_sequence(self, frames, mask=None) -> Tensor:
        return self.seq(frames, mask)

    def encode_text(self, ids, mask=None) -> Tensor:
        return self.text(ids, mask)


def contrastive_loss(Ea, Et, tau) -> Tensor:
    """Symmetric InfoNCE: mean of audio-to-text and text-to-audio cross-entropy.

    Logits are ``Ea Et^T / tau``; rows of both inputs are expected unit-norm.
    """
    Ea, Et = dc.as_tensor(Ea), dc.as_tensor(Et)
    if Ea.shape != Et.shape:
        raise dc.ShapeError("contrastive_loss", Ea.shape, Et.shape)
    N = Ea.shape[0]
    if N == 0:
        raise ValueError("contrastive loss needs at least one pair")
    logits = dc.matmul(Ea, Et.T) / tau
    eye = np.eye(N)
    a2t = (dc.log_softmax(logits, axis=1) * eye).sum()
    t2a = (dc.log_softmax(logits, axis=0) * eye).sum()
    return -(a2t + t2a) * (1.0 / (2 * N))


def _ranks(sim: np.ndarray) -> np.ndarray:
    """0-based rank of the diagonal item in each row; ties go to the lower index."""
    N = sim.shape[0]
    diag = sim[np.arange(N), np.arange(N)][:, None]
    idx = np.arange(N)
    better = (sim > diag) | ((sim == diag) & (idx[None, :] < idx[:, None]))
    return better.sum(axis=1)


def retrieval_metrics(Ea, Et, ks=(1, 5, 10)) -> dict:
    """Recall@k both ways by cosine similarity (rows assumed unit-norm)."""
    Ea = np.asarray(getattr(Ea, "data", Ea))
    Et = np.asarray(getattr(Et, "data", Et))
    sim = Ea @ Et.T
    out = {}
    for name, s in (("A2T", sim), ("T2A", sim.T)):
        r = _ranks(s)
        for k in ks:
            out[f"{name}@{k}"] = float(np.mean(r < k))
    return out


def write_retrieval_csv(metrics: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "k", "recall"])
        for key in sorted(metrics):
            direction, k = key.split("@")
            w.writerow([direction, int(k), repr(metrics[key])])


def rerank(candidates, description, model: JointEmbedder, masks=None):
    """Pick the candidate whose embedding is closest to the description.

    ``candidates``: (K, T, C) or a list of (T_k, C). Returns (index, scores);
    ties resolve to the lowest index.
    """
    if isinstance(candidates, (list, tuple)):
        if not candidates:
            raise ValueError("need at least one candidate")
        from flowbox.flowmatch.conditioning import _pad_stack
        frames, masks = _pad_stack(list(candidates))
    else:
        frames = np.asarray(candidates, dtype=np.float64)
        if len(frames) == 0:
            raise ValueError("need at least one candidate")
    with dc.no_grad():
        ea = model.encode_sequence(frames, masks).data
        et = model.encode_text(np.asarray(description)[None]).data[0]
    scores = ea @ et
    return int(np.argmax(scores)), scores


@dataclass
class JointTrainConfig:
    steps: int = 600
    batch: int = 64
    lr: float = 3e-3
    warmup: int = 20
    eval_every: int = 50
    seed: int = 0


def _batch_arrays(utts):
    from flowbox.flowmatch.conditioning import _pad_stack
    frames, mask = _pad_stack([u.frames for u in utts])
    desc = np.stack([u.description for u in utts])
    return frames, mask, desc


def unique_by_description(utts) -> list:
    seen, out = set(), []
    for u in utts:
        key = tuple(u.description.tolist())
        if key not in seen:
            seen.add(key)
            out.append(u)
    return out


def embed_utterances(model: JointEmbedder, utts):
    frames, mask, desc = _batch_arrays(utts)
    with dc.no_grad():
        return model.encode_sequence(frames, mask).data, model.encode_text(desc).data


def train_joint_embedder(model: JointEmbedder, train, valid, cfg: JointTrainConfig, log=None):
    """In-batch contrastive training; keeps the parameters with best validation A2T@10.

    Ties on A2T@10 (it saturates on small validation sets) fall back to the
    mean of all recalls. Batches avoid duplicate descriptions so every
    off-diagonal pair is a true negative.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr, clip=None, warmup=cfg.warmup)
    valid_u = unique_by_description(valid)
    best, best_score, history = model.state_dict(), (-1.0, -1.0), []
    params = model.trainable_parameters()
    for step in range(1, cfg.steps + 1):
        order = rng.permutation(len(train))
        pick = unique_by_description([train[i] for i in order])[:cfg.batch]
        frames, mask, desc = _batch_arrays(pick)
        loss = contrastive_loss(model.encode_sequence(frames, mask), model.encode_text(desc), model.tau())
        backprop(loss, params)
        adam_step(params, state)
        history.append(("loss", step, float(loss.data)))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            m = retrieval_metrics(*embed_utterances(model, valid_u))
            history.append(("valid_A2T@10", step, m["A2T@10"]))
            if log:
                log(step, float(loss.data), m)
            score = (m["A2T@10"], float(np.mean(list(m.values()))))
            if score > best_score:
                best_score, best = score, model.state_dict()
    model.load_state_dict(best)
    return model, history
