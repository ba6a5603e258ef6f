"""InfoNCE and the three proxy-task losses.

Every loss accepts a single query ``(d,)`` (returning a scalar node) or a
batch ``(n, d)`` (returning one loss per row).  Keys are always detached:
gradients reach only the query and the order classifier.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class LossBreakdown:
    inter: float
    intra: float
    temporal: float
    total: float
    temperature: float


def _key_array(k) -> np.ndarray:
    return np.asarray(k.value if isinstance(k, ad.Node) else k, dtype=np.float64)


def _negatives_matrix(negatives, d: int) -> np.ndarray:
    if negatives is None:
        return np.zeros((0, d))
    if isinstance(negatives, np.ndarray) and negatives.ndim == 2:
        return negatives.astype(np.float64, copy=False)
    rows = [_key_array(k) for k in negatives]
    return np.stack(rows) if rows else np.zeros((0, d))


def _nce(q: ad.Node, positive: np.ndarray, paired: Sequence[np.ndarray], shared: np.ndarray,
         tau: float) -> ad.Node:
    """Per-row InfoNCE for a (n, d) query batch.

    ``paired`` negatives are (n, d) arrays, one key per row; ``shared`` is an
    (m, d) array of negatives common to every row.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    n, d = q.shape
    for k in (positive, *paired):
        if k.shape != (n, d):
            raise ad.ShapeError(f"key batch {k.shape} does not match query batch {(n, d)}")
    if shared.shape[0] and shared.shape[1] != d:
        raise ad.ShapeError(f"negatives of width {shared.shape[1]} do not match query width {d}")
    cols = [ad.reshape(ad.dot(q, ad.constant(k)), (n, 1)) for k in (positive, *paired)]
    if shared.shape[0]:
        cols.append(ad.linear(q, ad.constant(shared.T), ad.constant(np.zeros(shared.shape[0]))))
    logits = ad.scale(ad.concat(cols, axis=1), 1.0 / tau)
    return ad.sub(ad.logsumexp(logits), ad.select(logits, 0))


def _batched(q) -> tuple[ad.Node, bool]:
    q = ad.as_node(q)
    if q.value.ndim == 1:
        return ad.reshape(q, (1, q.shape[0])), True
    return q, False


def _rows(k, n: int) -> np.ndarray:
    return _key_array(k).reshape(n, -1)


def _finish(loss: ad.Node, single: bool) -> ad.Node:
    return ad.reshape(loss, ()) if single else loss


def info_nce(q, k_pos, negatives, tau: float) -> ad.Node:
    """-log softmax weight of the positive among positive + negatives."""
    qb, single = _batched(q)
    n, d = qb.shape
    return _finish(_nce(qb, _rows(k_pos, n), (), _negatives_matrix(negatives, d), tau), single)


def inter_frame_loss(s_q, keys: Sequence, negatives, tau: float) -> ad.Node:
    """Mean of InfoNCE over the three same-video keys against the memory negatives."""
    if len(keys) != 3:
        raise ValueError(f"inter-frame loss takes exactly 3 keys, got {len(keys)}")
    qb, single = _batched(s_q)
    n, d = qb.shape
    neg = _negatives_matrix(negatives, d)
    terms = [_nce(qb, _rows(k, n), (), neg, tau) for k in keys]
    return _finish(ad.scale(ad.add(ad.add(terms[0], terms[1]), terms[2]), 1.0 / 3.0), single)


def intra_frame_loss(s_q, s_k1, s_k2, s_k3, tau: float) -> ad.Node:
    """InfoNCE with the anchor key as positive and only the other two frames as negatives."""
    qb, single = _batched(s_q)
    n, d = qb.shape
    loss = _nce(qb, _rows(s_k1, n), (_rows(s_k2, n), _rows(s_k3, n)), np.zeros((0, d)), tau)
    return _finish(loss, single)


def temporal_order_loss(logit, y) -> ad.Node:
    """Binary cross-entropy of the order classifier, from its pre-sigmoid logit.

    ``-y log g - (1 - y) log(1 - g)`` with ``g = sigmoid(logit)`` equals
    ``y softplus(-z) + (1 - y) softplus(z)``.
    """
    z = ad.as_node(logit)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), z.shape).copy()
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("order labels must be 0 or 1")
    return ad.add(ad.mul(ad.softplus(ad.scale(z, -1.0)), ad.constant(y)),
                  ad.mul(ad.softplus(z), ad.constant(1.0 - y)))


def probability_to_logit(g: float) -> float:
    return float(np.log(g) - np.log1p(-g))


def total_loss(inter: ad.Node, intra: ad.Node, temporal: ad.Node,
               weights: Sequence[float] = (1.0, 1.0, 1.0), tau: float = 0.1
               ) -> tuple[ad.Node, LossBreakdown]:
    """Weighted sum of the three scalar losses, plus the raw components."""
    w = [float(x) for x in weights]
    if len(w) != 3 or any(x < 0 for x in w):
        raise ValueError(f"loss weights must be 3 nonnegative reals, got {weights}")
    parts = [ad.as_node(p) for p in (inter, intra, temporal)]
    out = ad.scale(parts[0], w[0])
    for p, wi in zip(parts[1:], w[1:]):
        out = ad.add(out, ad.scale(p, wi))
    vals = [float(p.value) for p in parts]
    return out, LossBreakdown(*vals, total=float(out.value), temperature=tau)
