"""Synthetic sequences, triplet sampling, vector augmentation and the dataset file."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

MAGIC = b"SECO"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_SEQ_HEADER = struct.Struct("<II")
_MASK64 = (1 << 64) - 1


@dataclass
class GenConfig:
    num_classes: int = 10
    sequences_per_class: int = 30
    frames: int = 16
    raw_dim: int = 64
    prototype_scale: float = 1.0
    drift_scale: float = 2.0
    frame_noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_classes", "sequences_per_class", "frames", "raw_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"gen.{name} must be a positive integer")
        if self.frames < 3:
            raise ConfigurationError("gen.frames must be at least 3 for triplet sampling")
        for name in ("prototype_scale", "drift_scale", "frame_noise_sigma"):
            if float(getattr(self, name)) < 0:
                raise ConfigurationError(f"gen.{name} must be nonnegative")


@dataclass
class AugmentConfig:
    noise: float = 0.1
    drop_p: float = 0.2
    scale: float = 0.1


@dataclass
class SequenceRecord:
    video_id: int
    class_id: int
    frames: np.ndarray  # (L, raw_dim) float32

    def __eq__(self, other) -> bool:
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        return (self.video_id == other.video_id and self.class_id == other.class_id
                and self.frames.shape == other.frames.shape
                and bool(np.array_equal(self.frames, other.frames)))


@dataclass
class TripletSample:
    query: np.ndarray
    key1: np.ndarray
    key2: np.ndarray
    key3: np.ndarray
    y: int
    indices: tuple[int, int, int]
    anchor_is_first: bool
    video_id: int = -1


def _class_rng(seed: int, c: int) -> np.random.Generator:
    return np.random.default_rng([seed & _MASK64, 0, c])


def _video_rng(seed: int, video_id: int) -> np.random.Generator:
    return np.random.default_rng([seed & _MASK64, 1, video_id])


def generate_sequence(cfg: GenConfig, class_id: int, video_id: int,
                      prototype: np.ndarray, drift_dir: np.ndarray) -> SequenceRecord:
    rng = _video_rng(cfg.seed, video_id)
    offset = rng.normal(0.0, cfg.prototype_scale / 4.0, size=cfg.raw_dim)
    t = np.arange(cfg.frames) / (cfg.frames - 1)
    frames = (prototype + offset)[None, :] + (t * cfg.drift_scale)[:, None] * drift_dir[None, :]
    frames = frames + rng.normal(0.0, cfg.frame_noise_sigma, size=frames.shape)
    return SequenceRecord(video_id, class_id, frames.astype(np.float32))


def class_prototypes(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-class prototype (C, raw_dim) and unit drift direction (C, raw_dim)."""
    protos, dirs = [], []
    for c in range(cfg.num_classes):
        rng = _class_rng(cfg.seed, c)
        protos.append(rng.normal(0.0, cfg.prototype_scale, size=cfg.raw_dim))
        u = rng.normal(size=cfg.raw_dim)
        dirs.append(u / np.linalg.norm(u))
    return np.array(protos), np.array(dirs)


def generate_dataset(cfg: GenConfig) -> list[SequenceRecord]:
    """Each video draws from its own sub-generator keyed by (seed, video_id)."""
    cfg.validate()
    protos, dirs = class_prototypes(cfg)
    records = []
    for c in range(cfg.num_classes):
        for j in range(cfg.sequences_per_class):
            vid = c * cfg.sequences_per_class + j
            records.append(generate_sequence(cfg, c, vid, protos[c], dirs[c]))
    return records


def split_dataset(records: list[SequenceRecord], eval_per_class: int
                  ) -> tuple[list[SequenceRecord], list[SequenceRecord]]:
    """Hold out the last ``eval_per_class`` sequences of every class."""
    by_class: dict[int, list[SequenceRecord]] = {}
    for r in records:
        by_class.setdefault(r.class_id, []).append(r)
    train, held = [], []
    for c in sorted(by_class):
        seqs = by_class[c]
        if eval_per_class >= len(seqs):
            raise DataError(f"class {c} has {len(seqs)} sequences, cannot hold out {eval_per_class}")
        cut = len(seqs) - eval_per_class
        train.extend(seqs[:cut])
        held.extend(seqs[cut:])
    return train, held


def augment(frame: np.ndarray, rng: np.random.Generator, acfg: AugmentConfig) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    x = x + rng.normal(0.0, acfg.noise, size=x.shape)
    x = np.where(rng.random(x.shape) < acfg.drop_p, 0.0, x)
    return x * rng.uniform(1.0 - acfg.scale, 1.0 + acfg.scale)


def sample_indices(length: int, rng: np.random.Generator) -> tuple[tuple[int, int, int], bool]:
    """Sorted distinct frame indices and whether the first one is the anchor."""
    if length < 3:
        raise DataError(f"need at least 3 frames to sample a triplet, got {length}")
    t = np.sort(rng.choice(length, size=3, replace=False))
    return (int(t[0]), int(t[1]), int(t[2])), bool(rng.random() < 0.5)


def sample_triplet(seq: SequenceRecord, rng: np.random.Generator,
                   acfg: AugmentConfig | None = None) -> TripletSample:
    acfg = acfg or AugmentConfig()
    idx, first = sample_indices(seq.frames.shape[0], rng)
    anchor, others = (idx[0], idx[1:]) if first else (idx[2], idx[:2])
    frames = seq.frames
    return TripletSample(
        query=augment(frames[anchor], rng, acfg),
        key1=augment(frames[anchor], rng, acfg),
        key2=augment(frames[others[0]], rng, acfg),
        key3=augment(frames[others[1]], rng, acfg),
        y=1 if first else 0,
        indices=idx,
        anchor_is_first=first,
        video_id=seq.video_id,
    )


def write_dataset(records: list[SequenceRecord], path: str | Path) -> None:
    if not records:
        raise DataError("cannot write an empty dataset")
    L, raw_dim = records[0].frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(records), L, raw_dim))
        for r in records:
            if r.frames.shape != (L, raw_dim):
                raise DataError(f"sequence {r.video_id} has shape {r.frames.shape}, expected {(L, raw_dim)}")
            fh.write(_SEQ_HEADER.pack(r.video_id, r.class_id))
            fh.write(np.ascontiguousarray(r.frames, dtype="<f4").tobytes())


def read_dataset(path: str | Path) -> list[SequenceRecord]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file is {len(blob)} bytes, shorter than the {_HEADER.size}-byte header", len(blob))
    magic, version, n, L, raw_dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    body = L * raw_dim * 4
    expected = _HEADER.size + n * (_SEQ_HEADER.size + body)
    if len(blob) != expected:
        raise FormatError(f"file length {len(blob)} does not match header-implied length {expected}",
                          min(len(blob), expected))
    records, off = [], _HEADER.size
    for _ in range(n):
        vid, cid = _SEQ_HEADER.unpack_from(blob, off)
        off += _SEQ_HEADER.size
        frames = np.frombuffer(blob, dtype="<f4", count=L * raw_dim, offset=off).reshape(L, raw_dim)
        off += body
        records.append(SequenceRecord(int(vid), int(cid), frames.astype(np.float32)))
    return records
