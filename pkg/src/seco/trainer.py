"""Joint training of the three proxy tasks with a momentum key encoder."""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import AugmentConfig, SequenceRecord, TripletSample, read_dataset, sample_triplet
from .encoders import (EncoderParams, OrderClassifierParams, encode, init_encoder,
                       momentum_update, order_logit)
from .errors import CheckpointError, ConfigurationError, DivergenceError
from .losses import LossBreakdown, inter_frame_loss, intra_frame_loss, temporal_order_loss, total_loss
from .memory_queue import KeyQueue

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SECK"
CKPT_VERSION = 1
METRICS_HEADER = "epoch,lr,inter,intra,temporal,total"


@dataclass
class TrainConfig:
    epochs: int = 600
    batch_size: int = 32
    lr0: float = 0.05
    sgd_momentum: float = 0.9
    temperature: float = 0.1
    key_momentum: float = 0.999
    queue_capacity: int = 1024
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    backbone_widths: tuple[int, ...] = (64, 64)
    head_hidden: int = 64
    embed_dim: int = 16
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data_path: str | None = None
    out_dir: str | None = None

    def validate(self) -> None:
        if not self.lr0 > 0:
            raise ConfigurationError(f"train.lr0 must be positive, got {self.lr0}")
        if not self.temperature > 0:
            raise ConfigurationError(f"train.temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.key_momentum <= 1.0:
            raise ConfigurationError(f"train.key_momentum must lie in [0, 1], got {self.key_momentum}")
        if not 0.0 <= self.sgd_momentum < 1.0:
            raise ConfigurationError(f"train.sgd_momentum must lie in [0, 1), got {self.sgd_momentum}")
        if self.batch_size < 1 or self.epochs < 0 or self.queue_capacity < 1:
            raise ConfigurationError("train.batch_size and train.queue_capacity must be >= 1, train.epochs >= 0")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ConfigurationError(f"train.loss_weights must be 3 nonnegative reals, got {self.loss_weights}")


@dataclass
class TrainState:
    query: EncoderParams
    key: EncoderParams
    order: OrderClassifierParams
    velocity: list[np.ndarray]
    queue: KeyQueue
    rng: np.random.Generator
    step: int = 0


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[dict]


def init_state(cfg: TrainConfig, raw_dim: int) -> TrainState:
    cfg.validate()
    init_rng = np.random.default_rng([cfg.seed & ((1 << 64) - 1), 0])
    query = init_encoder(raw_dim, cfg.backbone_widths, cfg.head_hidden, cfg.embed_dim, init_rng)
    order = OrderClassifierParams.zeros(cfg.embed_dim)
    velocity = [np.zeros_like(a) for a in query.arrays()] + [np.zeros((3 * cfg.embed_dim, 1)), np.zeros(1)]
    return TrainState(
        query=query,
        key=query.copy(),
        order=order,
        velocity=velocity,
        queue=KeyQueue(cfg.queue_capacity, cfg.embed_dim),
        rng=np.random.default_rng([cfg.seed & ((1 << 64) - 1), 1]),
    )


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def batch_loss(state: TrainState, batch: Sequence[TripletSample], cfg: TrainConfig,
               negatives: np.ndarray):
    """Build the batch-mean objective; returns (loss node, breakdown, leaves, key embeddings)."""
    q_leaves = state.query.leaves()
    phi_leaves = state.order.leaves()
    queries = np.stack([s.query for s in batch])
    s_q = encode(queries, state.query, q_leaves)
    keys = [encode(np.stack([getattr(s, f) for s in batch]), state.key).value
            for f in ("key1", "key2", "key3")]
    y = np.array([s.y for s in batch], dtype=np.float64)

    tau = cfg.temperature
    inter = ad.mean(inter_frame_loss(s_q, keys, negatives, tau))
    intra = ad.mean(intra_frame_loss(s_q, keys[0], keys[1], keys[2], tau))
    temporal = ad.mean(temporal_order_loss(order_logit(s_q, keys[1], keys[2], phi_leaves), y))
    loss, parts = total_loss(inter, intra, temporal, cfg.loss_weights, tau)
    return loss, parts, q_leaves + phi_leaves, keys


def train_step(state: TrainState, batch: Sequence[TripletSample], lr: float,
               cfg: TrainConfig) -> tuple[TrainState, LossBreakdown]:
    """One SGD step; mutates and returns ``state``."""
    if not batch:
        raise ValueError("empty batch")
    negatives = state.queue.snapshot_matrix()
    loss, parts, leaves, keys = batch_loss(state, batch, cfg, negatives)
    if not math.isfinite(parts.total):
        raise DivergenceError(state.step, parts.total)
    ad.backward(loss)

    params = state.query.arrays() + [state.order.W.reshape(-1, 1), np.array([state.order.bias])]
    updated = []
    for p, v, node in zip(params, state.velocity, leaves):
        v *= cfg.sgd_momentum
        v += node.grad
        updated.append(p - lr * v)
    nq = 2 * len(state.query.layers)
    state.query = EncoderParams.from_arrays(updated[:nq], len(state.query.backbone))
    state.order = OrderClassifierParams(updated[nq].reshape(-1), float(updated[nq + 1][0]))
    state.key = momentum_update(state.key, state.query, cfg.key_momentum)
    state.queue.enqueue(np.concatenate([keys[0], keys[1], keys[2]], axis=0))
    state.step += 1
    return state, parts


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(cfg: TrainConfig, records: Sequence[SequenceRecord] | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; writes checkpoint and metrics when ``cfg.out_dir`` is set."""
    cfg.validate()
    if records is None:
        if cfg.data_path is None:
            raise ConfigurationError("no dataset given (train.data_path)")
        records = read_dataset(cfg.data_path)
    if not records:
        raise ConfigurationError("training dataset is empty")
    raw_dim = records[0].frames.shape[1]
    state = init_state(cfg, raw_dim)
    n = len(records)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(cfg.epochs * steps_per_epoch, 1)
    w = cfg.loss_weights
    metrics = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        lr_epoch = cosine_lr(state.step, total_steps, cfg.lr0)
        for idx in _epoch_batches(n, cfg.batch_size, state.rng):
            batch = [sample_triplet(records[i], state.rng, cfg.augment) for i in idx]
            lr = cosine_lr(state.step, total_steps, cfg.lr0)
            state, parts = train_step(state, batch, lr, cfg)
            sums += (parts.inter, parts.intra, parts.temporal)
        inter, intra, temporal = sums / steps_per_epoch
        row = {"epoch": epoch + 1, "lr": lr_epoch, "inter": inter, "intra": intra,
               "temporal": temporal, "total": w[0] * inter + w[1] * intra + w[2] * temporal}
        metrics.append(row)
        log.info("epoch %d lr %.4g inter %.4f intra %.4f temporal %.4f total %.4f",
                 row["epoch"], lr_epoch, inter, intra, temporal, row["total"])
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, out / "checkpoint.bin")
        write_metrics(metrics, out / "metrics.csv")
    return TrainResult(state, metrics)


def write_metrics(rows: Sequence[dict], path: str | Path) -> None:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join([str(r["epoch"])] + [f"{r[k]:.9g}" for k in
                                                   ("lr", "inter", "intra", "temporal", "total")]))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoint


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    layers = state.query.shapes()
    head = struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(layers))
    head += b"".join(struct.pack("<II", r, c) for r, c in layers)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for params in (state.query, state.key) for a in params.arrays())
    body += np.ascontiguousarray(state.order.W, dtype="<f8").tobytes()
    body += struct.pack("<d", state.order.bias)
    Path(path).write_bytes(head + body)


@dataclass
class Checkpoint:
    query: EncoderParams
    key: EncoderParams
    order: OrderClassifierParams


def load_checkpoint(path: str | Path, expect_shapes: Sequence[tuple[int, int]] | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise CheckpointError(f"file is {len(blob)} bytes, too short for a checkpoint header", len(blob))
    magic, version, n_layers = struct.unpack_from("<4sII", blob, 0)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", 0)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    # the head is always two layers; everything before it is backbone
    n_backbone = n_layers - 2
    off = 12
    if len(blob) < off + 8 * n_layers or n_backbone < 0:
        raise CheckpointError("malformed architecture descriptor", off)
    shapes = [struct.unpack_from("<II", blob, off + 8 * i) for i in range(n_layers)]
    off += 8 * n_layers
    if expect_shapes is not None and [tuple(s) for s in expect_shapes] != shapes:
        raise ConfigurationError(f"checkpoint architecture {shapes} does not match configured {list(expect_shapes)}")
    per_encoder = sum(r * c + c for r, c in shapes)
    d = shapes[-1][1]
    need = off + 8 * (2 * per_encoder + 3 * d + 1)
    if len(blob) != need:
        raise CheckpointError(f"file length {len(blob)} does not match descriptor-implied length {need}",
                              min(len(blob), need))
    values = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)

    def take_encoder(start: int) -> tuple[EncoderParams, int]:
        arrays, pos = [], start
        for r, c in shapes:
            arrays.append(values[pos:pos + r * c].reshape(r, c).copy())
            pos += r * c
            arrays.append(values[pos:pos + c].copy())
            pos += c
        return EncoderParams.from_arrays(arrays, n_backbone), pos

    query, pos = take_encoder(0)
    key, pos = take_encoder(pos)
    order = OrderClassifierParams(values[pos:pos + 3 * d].copy(), float(values[pos + 3 * d]))
    return Checkpoint(query, key, order)
