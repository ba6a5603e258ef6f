"""Frozen-feature linear probe and temporal-order accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import AugmentConfig, SequenceRecord, sample_triplet
from .encoders import EncoderParams, OrderClassifierParams, backbone_features, encode, order_probability
from .errors import DataError


@dataclass
class FeatureMatrix:
    rows: np.ndarray    # (num_sequences, feature_dim)
    labels: np.ndarray  # (num_sequences,) int


@dataclass
class ProbeConfig:
    iterations: int = 500
    lr: float = 0.5
    seed: int = 0
    order_samples: int = 1000


@dataclass
class ProbeResult:
    top1: float
    per_class: np.ndarray
    n_train: int
    n_eval: int
    predictions: np.ndarray = field(repr=False)


def extract_features(params: EncoderParams, records: Sequence[SequenceRecord]) -> FeatureMatrix:
    """Video-level feature: mean of the frozen backbone features of all frames."""
    rows = [backbone_features(r.frames, params).mean(axis=0) for r in records]
    width = params.feature_dim
    return FeatureMatrix(np.array(rows).reshape(len(rows), width),
                         np.array([r.class_id for r in records], dtype=np.int64))


def standardize(train: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale both splits by the train split's mean and std (std 0 -> 1)."""
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train - mu) / sd, (other - mu) / sd


def linear_probe(train: FeatureMatrix, evaluation: FeatureMatrix,
                 cfg: ProbeConfig | None = None) -> ProbeResult:
    """Multinomial logistic regression by full-batch gradient descent."""
    cfg = cfg or ProbeConfig()
    if train.rows.shape[1] != evaluation.rows.shape[1]:
        raise DataError(f"feature widths differ: train {train.rows.shape[1]}, eval {evaluation.rows.shape[1]}")
    classes = np.unique(train.labels)
    missing = sorted(set(np.unique(evaluation.labels).tolist()) - set(classes.tolist()))
    if missing:
        raise DataError(f"classes {missing} appear in the eval split but not in the train split")
    index = {int(c): i for i, c in enumerate(classes)}
    y_train = np.array([index[int(c)] for c in train.labels])
    x_train, x_eval = standardize(train.rows, evaluation.rows)

    n, f = x_train.shape
    k = classes.size
    rng = np.random.default_rng(cfg.seed)
    W = ad.leaf(rng.normal(0.0, 0.01, size=(f, k)))
    b = ad.leaf(np.zeros(k))
    onehot = ad.constant(np.eye(k)[y_train])
    xs = ad.constant(x_train)
    for _ in range(cfg.iterations):
        logits = ad.linear(xs, W, b)
        picked = ad.dot(logits, onehot)
        loss = ad.mean(ad.sub(ad.logsumexp(logits), picked))
        ad.zero_grad((W, b))
        ad.backward(loss)
        W = ad.leaf(W.value - cfg.lr * W.grad)
        b = ad.leaf(b.value - cfg.lr * b.grad)

    pred = classes[np.argmax(x_eval @ W.value + b.value, axis=1)]
    correct = pred == evaluation.labels
    per_class = np.array([correct[evaluation.labels == c].mean() if np.any(evaluation.labels == c) else np.nan
                          for c in classes])
    return ProbeResult(float(correct.mean()), per_class, n, len(evaluation.labels), pred)


def order_accuracy(query: EncoderParams, key: EncoderParams, order: OrderClassifierParams,
                   records: Sequence[SequenceRecord], n_samples: int, seed: int,
                   acfg: AugmentConfig | None = None, flip_labels: bool = False) -> float:
    """Fraction of sampled triplets whose order the classifier gets right (p >= 0.5 means y = 1)."""
    if n_samples < 1 or not records:
        raise DataError("order accuracy needs at least one sample and one sequence")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(records), size=n_samples)
    trips = [sample_triplet(records[i], rng, acfg) for i in picks]
    s_q = encode(np.stack([t.query for t in trips]), query).value
    k2 = encode(np.stack([t.key2 for t in trips]), key).value
    k3 = encode(np.stack([t.key3 for t in trips]), key).value
    p = order_probability(s_q, k2, k3, order).value
    y = np.array([t.y for t in trips])
    if flip_labels:
        y = 1 - y
    return float(np.mean((p >= 0.5).astype(int) == y))


def write_probe_report(result: ProbeResult, classes: Sequence[int], order_acc: float | None,
                       path: str | Path | None = None) -> str:
    lines = ["metric,value", f"top1,{result.top1:.6f}"]
    lines += [f"acc_c{int(c)},{a:.6f}" for c, a in zip(classes, result.per_class)]
    if order_acc is not None:
        lines.append(f"order_acc,{order_acc:.6f}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
