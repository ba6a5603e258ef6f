"""Query/key encoders, the momentum update, and the temporal-order classifier."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class EncoderParams:
    """MLP backbone followed by a two-layer projection head.

    ``backbone`` and ``head`` hold ``(W, bias)`` pairs with ``W`` shaped
    (fan_in, fan_out).
    """

    backbone: list[Layer]
    head: list[Layer]

    def __post_init__(self):
        if len(self.head) != 2:
            raise ConfigurationError(f"head needs exactly 2 layers, got {len(self.head)}")
        layers = self.layers
        for (W, b), (W2, _) in zip(layers, layers[1:]):
            if W.shape[1] != W2.shape[0]:
                raise ConfigurationError(f"layer shapes {W.shape} and {W2.shape} do not chain")
        for W, b in layers:
            if b.shape != (W.shape[1],):
                raise ConfigurationError(f"bias {b.shape} does not match weight {W.shape}")

    @property
    def layers(self) -> list[Layer]:
        return list(self.backbone) + list(self.head)

    @property
    def raw_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.backbone[-1][0].shape[1] if self.backbone else self.raw_dim

    @property
    def embed_dim(self) -> int:
        return self.head[-1][0].shape[1]

    def shapes(self) -> list[tuple[int, int]]:
        return [W.shape for W, _ in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list: W0, b0, W1, b1, ..."""
        return [a for layer in self.layers for a in layer]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], n_backbone: int) -> EncoderParams:
        pairs = [(np.asarray(arrays[i], dtype=np.float64), np.asarray(arrays[i + 1], dtype=np.float64))
                 for i in range(0, len(arrays), 2)]
        return cls(pairs[:n_backbone], pairs[n_backbone:])

    def copy(self) -> EncoderParams:
        return EncoderParams.from_arrays([a.copy() for a in self.arrays()], len(self.backbone))

    def leaves(self) -> list[ad.Node]:
        return [ad.leaf(a) for a in self.arrays()]


def init_encoder(raw_dim: int, backbone_widths: Sequence[int], head_hidden: int, embed_dim: int,
                 rng: np.random.Generator) -> EncoderParams:
    """Uniform(-b, b) weights with b = sqrt(6 / fan_in); zero biases."""
    dims = [raw_dim, *backbone_widths, head_hidden, embed_dim]
    if any(int(d) < 1 for d in dims):
        raise ConfigurationError(f"all layer widths must be positive, got {dims}")
    pairs = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        pairs.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    nb = len(backbone_widths)
    return EncoderParams(pairs[:nb], pairs[nb:])


def _as_batch(x) -> tuple[ad.Node, bool]:
    node = ad.as_node(x)
    if node.value.ndim == 1:
        return ad.reshape(node, (1, node.shape[0])), True
    return node, False


def _check_input(node: ad.Node, params: EncoderParams) -> None:
    if node.value.ndim != 2 or node.shape[1] != params.raw_dim:
        raise ConfigurationError(
            f"input shape {node.shape[-1:]} does not match encoder raw_dim {params.raw_dim}")


def _mlp(h: ad.Node, layers: Sequence[tuple], relu_last: bool) -> ad.Node:
    for i, (W, b) in enumerate(layers):
        h = ad.linear(h, W, b)
        if relu_last or i < len(layers) - 1:
            h = ad.relu(h)
    return h


def encode(patch, params: EncoderParams, nodes: Sequence[ad.Node] | None = None) -> ad.Node:
    """Embed one patch (raw_dim,) or a batch (n, raw_dim) onto the unit sphere.

    ``nodes`` are optional graph leaves standing in for ``params.arrays()``;
    pass them to get gradients for the encoder weights.
    """
    x, single = _as_batch(patch)
    _check_input(x, params)
    arrays = list(nodes) if nodes is not None else [ad.constant(a) for a in params.arrays()]
    if len(arrays) != 2 * len(params.layers):
        raise ConfigurationError(f"expected {2 * len(params.layers)} parameter nodes, got {len(arrays)}")
    pairs = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
    nb = len(params.backbone)
    # backbone output is post-ReLU, same as the probe feature
    h = _mlp(x, pairs[:nb], relu_last=True) if nb else x
    h = _mlp(h, pairs[nb:], relu_last=False)
    out = ad.l2_normalize(h)
    return ad.reshape(out, (out.shape[1],)) if single else out


def backbone_features(frames: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Frozen backbone output for (n, raw_dim) frames; no head, no normalization."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != params.raw_dim:
        raise ConfigurationError(f"frames of width {x.shape[1]} do not match encoder raw_dim {params.raw_dim}")
    for W, b in params.backbone:
        x = np.maximum(x @ W + b, 0.0)
    return x


def momentum_update(w_k: EncoderParams, w_q: EncoderParams, alpha: float) -> EncoderParams:
    """Key weights <- alpha * key + (1 - alpha) * query, per weight."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"momentum coefficient must lie in [0, 1], got {alpha}")
    if w_k.shapes() != w_q.shapes() or len(w_k.backbone) != len(w_q.backbone):
        raise ConfigurationError(f"architectures differ: key {w_k.shapes()} vs query {w_q.shapes()}")
    mixed = [alpha * k + (1.0 - alpha) * q for k, q in zip(w_k.arrays(), w_q.arrays())]
    return EncoderParams.from_arrays(mixed, len(w_k.backbone))


@dataclass
class OrderClassifierParams:
    """Linear layer over concat(query, key2, key3) producing one logit."""

    W: np.ndarray
    bias: float = 0.0
    embed_dim: int = field(init=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64).reshape(-1)
        if self.W.size % 3:
            raise ConfigurationError(f"order classifier weight length {self.W.size} is not 3 * embed_dim")
        self.bias = float(self.bias)
        self.embed_dim = self.W.size // 3

    @classmethod
    def zeros(cls, embed_dim: int) -> OrderClassifierParams:
        return cls(np.zeros(3 * embed_dim), 0.0)

    def arrays(self) -> list[np.ndarray]:
        return [self.W.copy(), np.array([self.bias])]

    def leaves(self) -> list[ad.Node]:
        return [ad.leaf(self.W.reshape(-1, 1)), ad.leaf(np.array([self.bias]))]


def order_logit(s_q, s_k2, s_k3, phi: OrderClassifierParams | Sequence[ad.Node]) -> ad.Node:
    """Pre-sigmoid score that the query precedes both keys.

    Keys enter gradient-stopped.  ``phi`` is either plain parameters or the
    two leaves returned by ``OrderClassifierParams.leaves()``.
    """
    q, single = _as_batch(s_q)
    k2, _ = _as_batch(ad.stop_gradient(s_k2))
    k3, _ = _as_batch(ad.stop_gradient(s_k3))
    if isinstance(phi, OrderClassifierParams):
        W, b = ad.constant(phi.W.reshape(-1, 1)), ad.constant(np.array([phi.bias]))
        d = phi.embed_dim
    else:
        W, b = phi
        d = W.shape[0] // 3
    if not q.shape[1] == k2.shape[1] == k3.shape[1] == d:
        raise ConfigurationError(
            f"embedding widths {q.shape[1]}, {k2.shape[1]}, {k3.shape[1]} do not match classifier width {d}")
    z = ad.linear(ad.concat([q, k2, k3], axis=1), W, b)
    return ad.reshape(z, ()) if single else ad.reshape(z, (z.shape[0],))


def order_probability(s_q, s_k2, s_k3, phi) -> ad.Node:
    return ad.sigmoid(order_logit(s_q, s_k2, s_k3, phi))
