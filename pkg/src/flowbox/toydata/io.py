"""On-disk corpus layout: ``meta.json``, ``manifest.jsonl`` and ``frames/<id>.fbx``.

Frame file: magic ``FBX1``, u32 T, u32 C, then T*C little-endian float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .aligned import AlignedCorpusConfig, CorpusSplit, ToyUtterance

FRAME_MAGIC = b"FBX1"


class CorpusFormatError(ValueError):
    pass


def write_frames(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("frames must be (T, C)")
    T, C = frames.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC + struct.pack("<II", T, C))
        fh.write(frames.astype("<f8").tobytes())


def read_frames(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FRAME_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {raw[:4]!r}")
    T, C = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != 8 * T * C:
        raise CorpusFormatError(f"{path}: expected {8 * T * C} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(T, C).astype(np.float64)


def save_corpus(split: CorpusSplit, cfg: AlignedCorpusConfig, root) -> Path:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "meta.json").write_text(json.dumps({"config": cfg.to_dict(), "seed": split.seed},
                                               sort_keys=True, indent=1) + "\n")
    lines = []
    for part in ("train", "valid", "test"):
        for u in getattr(split, part):
            lines.append(json.dumps({
                "id": u.uid, "split": part, "kind": u.kind, "style": u.style,
                "tokens": u.tokens.tolist(), "durations": u.durations.tolist(),
                "labels": u.labels, "description": u.description.tolist(),
            }, sort_keys=True))
            write_frames(root / "frames" / f"{u.uid}.fbx", u.frames)
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return root


def load_corpus(root) -> tuple[CorpusSplit, AlignedCorpusConfig]:
    root = Path(root)
    if not (root / "manifest.jsonl").exists():
        raise FileNotFoundError(f"no manifest.jsonl under {root}")
    meta = json.loads((root / "meta.json").read_text())
    cfg = AlignedCorpusConfig.from_dict(meta["config"])
    parts: dict[str, list] = {"train": [], "valid": [], "test": []}
    for line in (root / "manifest.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        frames = read_frames(root / "frames" / f"{rec['id']}.fbx")
        utt = ToyUtterance(rec["id"], np.array(rec["tokens"], np.int64), np.array(rec["durations"], np.int64),
                           int(rec["style"]), rec["labels"], frames, np.array(rec["description"], np.int64),
                           rec.get("kind", "speech"))
        if utt.durations.sum() != len(frames):
            raise CorpusFormatError(f"{rec['id']}: durations sum {utt.durations.sum()} != T {len(frames)}")
        parts[rec["split"]].append(utt)
    return CorpusSplit(parts["train"], parts["valid"], parts["test"], int(meta["seed"])), cfg


def save_points(path, x: np.ndarray) -> None:
    """Low-dimensional sample sets reuse the frame container (T = n, C = dim)."""
    write_frames(path, np.atleast_2d(x))


def load_points(path) -> np.ndarray:
    return read_frames(path)
