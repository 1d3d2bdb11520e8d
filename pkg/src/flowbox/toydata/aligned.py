"""Token-aligned "toy speech" with styles, attribute labels and descriptions.

Every frame is ``template[token] + style_offset[style] + pitch * pitch_vec``
plus i.i.d. Gaussian noise whose scale depends on the noise label, so the
conditional distribution of any masked region is known exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

SIL = 0
SOUND = 1
NUM_SPECIAL = 2

RATES = ("slow", "normal", "fast")
PITCHES = ("low", "high")
NOISES = ("clean", "noisy")


@dataclass
class AlignedCorpusConfig:
    n_utterances: int = 600
    feat_dim: int = 8
    frame_rate: int = 10
    vocab: int = 16
    styles: int = 5
    min_tokens: int = 4
    max_tokens: int = 8
    rate_frames: dict = field(default_factory=lambda: {"slow": 6, "normal": 4, "fast": 2})
    duration_jitter: int = 1
    silence_frames: tuple = (1, 3)
    template_scale: float = 1.0
    style_scale: float = 0.7
    pitch_shift: float = 0.6
    noise_sigma: dict = field(default_factory=lambda: {"clean": 0.05, "noisy": 0.25})
    sound_fraction: float = 0.0
    sound_seconds: tuple = (1.5, 3.0)
    splits: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AlignedCorpusConfig":
        d = dict(d)
        for key in ("silence_frames", "sound_seconds", "splits"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @property
    def token_vocab(self) -> int:
        """Token-id space including the silence and sound specials."""
        return self.vocab + NUM_SPECIAL


class DescriptionVocab:
    """Fixed ordered template ``style-k rate-x pitch-x noise-x``."""

    EMPTY = 0

    def __init__(self, styles: int):
        words = ["<empty>"] + [f"style-{k}" for k in range(styles)]
        words += [f"rate-{r}" for r in RATES] + ["rate-none"]
        words += [f"pitch-{p}" for p in PITCHES] + ["pitch-none"]
        words += [f"noise-{n}" for n in NOISES]
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, style: int, labels: dict) -> np.ndarray:
        return np.array([self.index[f"style-{style}"], self.index[f"rate-{labels.get('rate', 'none')}"],
                         self.index[f"pitch-{labels.get('pitch', 'none')}"],
                         self.index[f"noise-{labels['noise']}"]], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.words[int(i)] for i in ids]


@dataclass
class ToyUtterance:
    uid: str
    tokens: np.ndarray  # (N,) token ids
    durations: np.ndarray  # (N,) frames per token
    style: int
    labels: dict  # rate, pitch, noise (sound items have no rate/pitch)
    frames: np.ndarray  # (T, C)
    description: np.ndarray  # (4,) description token ids
    kind: str = "speech"

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    def frame_tokens(self) -> np.ndarray:
        return np.repeat(self.tokens, self.durations)

    def attribute_vector(self) -> tuple:
        return tuple(self.labels.get(k) for k in ("rate", "pitch", "noise"))


@dataclass
class CorpusSplit:
    train: list
    valid: list
    test: list
    seed: int

    def all(self) -> list:
        return self.train + self.valid + self.test


class ToyGenerator:
    """Fixed random templates drawn from the corpus seed."""

    def __init__(self, cfg: AlignedCorpusConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 1])
        C = cfg.feat_dim
        self.templates = np.zeros((cfg.token_vocab, C))
        self.templates[NUM_SPECIAL:] = rng.normal(0.0, cfg.template_scale, size=(cfg.vocab, C))
        self.style_offsets = rng.normal(0.0, cfg.style_scale, size=(cfg.styles, C))
        pv = rng.normal(size=C)
        self.pitch_vec = cfg.pitch_shift * pv / np.linalg.norm(pv) * np.sqrt(C)
        self.sound_patterns = rng.normal(0.0, cfg.template_scale, size=(cfg.styles, C))
        self.desc_vocab = DescriptionVocab(cfg.styles)

    def noise_sigma(self, labels: dict) -> float:
        return float(self.cfg.noise_sigma[labels["noise"]])

    def mean_frames(self, tokens, durations, style: int, labels: dict, kind: str = "speech") -> np.ndarray:
        """Closed-form conditional mean of every frame."""
        tokens = np.asarray(tokens)
        frame_tok = np.repeat(tokens, durations)
        if kind == "sound":
            mean = np.tile(self.sound_patterns[style], (len(frame_tok), 1))
            return mean
        mean = self.templates[frame_tok].copy()
        voiced = frame_tok >= NUM_SPECIAL
        sign = 1.0 if labels.get("pitch") == "high" else -1.0
        mean[voiced] += self.style_offsets[style] + sign * self.pitch_vec
        return mean

    def sample_frames(self, tokens, durations, style, labels, rng, kind="speech", n: int | None = None):
        mean = self.mean_frames(tokens, durations, style, labels, kind)
        shape = mean.shape if n is None else (n, *mean.shape)
        return mean + self.noise_sigma(labels) * rng.standard_normal(shape)

    def sample_durations(self, tokens, rate: str, rng) -> np.ndarray:
        base = self.cfg.rate_frames[rate]
        j = self.cfg.duration_jitter
        d = base + rng.integers(-j, j + 1, size=len(tokens))
        lo, hi = self.cfg.silence_frames
        sil = np.asarray(tokens) == SIL
        d[sil] = rng.integers(lo, hi + 1, size=int(sil.sum()))
        return np.maximum(d, 1).astype(np.int64)

    def make_utterance(self, uid: str, rng: np.random.Generator, style=None, labels=None,
                       kind: str | None = None) -> ToyUtterance:
        cfg = self.cfg
        if kind is None:
            kind = "sound" if rng.uniform() < cfg.sound_fraction else "speech"
        style = int(rng.integers(cfg.styles)) if style is None else int(style)
        if kind == "sound":
            from flowbox.flowmatch.conditioning import build_pseudo_transcript

            seconds = rng.uniform(*cfg.sound_seconds)
            tokens, durations = build_pseudo_transcript(seconds, cfg.frame_rate)
            labels = {"noise": NOISES[int(rng.integers(2))]} if labels is None else dict(labels)
        else:
            if labels is None:
                labels = {"rate": RATES[int(rng.integers(3))], "pitch": PITCHES[int(rng.integers(2))],
                          "noise": NOISES[int(rng.integers(2))]}
            n = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
            body = rng.integers(NUM_SPECIAL, cfg.token_vocab, size=n)
            tokens = np.concatenate([[SIL], body, [SIL]]).astype(np.int64)
            durations = self.sample_durations(tokens, labels["rate"], rng)
        frames = self.sample_frames(tokens, durations, style, labels, rng, kind)
        desc = self.desc_vocab.encode(style, labels)
        return ToyUtterance(uid, np.asarray(tokens, np.int64), np.asarray(durations, np.int64), style,
                            dict(labels), frames, desc, kind)


def gen_aligned_corpus(cfg: AlignedCorpusConfig, rng: np.random.Generator | None = None) -> CorpusSplit:
    """Generate and split a corpus; everything derives from ``cfg.seed`` unless ``rng`` is given."""
    gen = ToyGenerator(cfg)
    rng = np.random.default_rng([cfg.seed, 2]) if rng is None else rng
    utts = [gen.make_utterance(f"utt{i:05d}", rng) for i in range(cfg.n_utterances)]
    n_train = int(round(cfg.splits[0] * len(utts)))
    n_valid = int(round(cfg.splits[1] * len(utts)))
    return CorpusSplit(utts[:n_train], utts[n_train:n_train + n_valid], utts[n_train + n_valid:], cfg.seed)


class NoEligiblePrompt(LookupError):
    pass


def select_voice_prompt(utterances, target: ToyUtterance, rng: np.random.Generator,
                        augment: bool = True, burst_sigma: float = 0.3) -> ToyUtterance:
    """Same style, different attribute vector; optional additive noise burst."""
    pool = [u for u in utterances if u.style == target.style and u.uid != target.uid
            and u.kind == target.kind and u.attribute_vector() != target.attribute_vector()]
    if not pool:
        raise NoEligiblePrompt(f"no eligible voice prompt for style {target.style}")
    pick = pool[int(rng.integers(len(pool)))]
    frames = pick.frames.copy()
    if augment:
        T = len(frames)
        width = max(1, T // 4)
        start = int(rng.integers(0, T - width + 1))
        frames[start:start + width] += burst_sigma * rng.standard_normal((width, frames.shape[1]))
    return ToyUtterance(pick.uid, pick.tokens, pick.durations, pick.style, dict(pick.labels), frames,
                        pick.description, pick.kind)
