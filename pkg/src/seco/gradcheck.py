"""Finite-difference gradient suite over every loss and the encoder path."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .encoders import EncoderParams, encode, init_encoder, order_logit
from .losses import info_nce, inter_frame_loss, intra_frame_loss, temporal_order_loss, total_loss

# small shapes keep 100 points x all coordinates under a minute
D = 4
RAW = 5
WIDTHS = (4,)
HIDDEN = 4
TAU = 0.1
KINK_MARGIN = 1e-3


@dataclass
class TargetReport:
    name: str
    points: int
    max_rel_error: float
    worst: tuple[int, int]
    passed: bool


def _unit(rng, *shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _pre_activations(x: np.ndarray, params: EncoderParams) -> np.ndarray:
    """All ReLU inputs of the encoder at ``x`` (used to steer clear of kinks)."""
    acts, h = [], np.atleast_2d(x)
    layers = params.layers
    for i, (W, b) in enumerate(layers[:-1]):
        h = h @ W + b
        acts.append(h.ravel())
        h = np.maximum(h, 0.0)
    return np.concatenate(acts)


def _loss_targets(rng) -> list[tuple[str, Callable, list[np.ndarray]]]:
    """(name, f(nodes) -> scalar, theta) for each loss w.r.t. the query embedding."""
    q = rng.normal(size=D)
    k = _unit(rng, 3, D)
    neg = _unit(rng, 6, D)
    phi = rng.normal(size=(3 * D, 1)) * 0.5
    bias = rng.normal(size=1) * 0.5
    y = int(rng.integers(0, 2))

    def nce(p):
        return info_nce(ad.l2_normalize(p[0]), k[0], neg, TAU)

    def inter(p):
        return inter_frame_loss(ad.l2_normalize(p[0]), list(k), neg, TAU)

    def intra(p):
        return intra_frame_loss(ad.l2_normalize(p[0]), k[0], k[1], k[2], TAU)

    def temporal_q(p):
        return temporal_order_loss(order_logit(ad.l2_normalize(p[0]), k[1], k[2],
                                               [ad.constant(phi), ad.constant(bias)]), y)

    s_fixed = _unit(rng, D)

    def temporal_phi(p):
        return temporal_order_loss(order_logit(s_fixed, k[1], k[2], p), y)

    def combined(p):
        s_q = ad.l2_normalize(p[0])
        z = order_logit(s_q, k[1], k[2], [p[1], p[2]])
        out, _ = total_loss(inter_frame_loss(s_q, list(k), neg, TAU),
                            intra_frame_loss(s_q, k[0], k[1], k[2], TAU),
                            temporal_order_loss(z, y))
        return out

    return [
        ("info_nce/query", nce, [q]),
        ("inter_frame/query", inter, [q]),
        ("intra_frame/query", intra, [q]),
        ("temporal/query", temporal_q, [q]),
        ("temporal/classifier", temporal_phi, [phi, bias]),
        ("total/query+classifier", combined, [q, phi, bias]),
    ]


def _encoder_target(rng) -> tuple[str, Callable, list[np.ndarray]]:
    """Total loss of a 2-sample batch differentiated through the query encoder."""
    while True:
        params = init_encoder(RAW, WIDTHS, HIDDEN, D, rng)
        params = EncoderParams.from_arrays([a + rng.normal(0, 0.1, size=a.shape) for a in params.arrays()],
                                           len(WIDTHS))
        x = rng.normal(size=(2, RAW))
        if np.min(np.abs(_pre_activations(x, params))) > KINK_MARGIN:
            break
    k = _unit(rng, 3, 2, D)
    neg = _unit(rng, 5, D)
    phi = [ad.constant(rng.normal(size=(3 * D, 1))), ad.constant(rng.normal(size=1))]
    y = rng.integers(0, 2, size=2)

    def f(p):
        s_q = encode(x, params, p)
        out, _ = total_loss(ad.mean(inter_frame_loss(s_q, list(k), neg, TAU)),
                            ad.mean(intra_frame_loss(s_q, k[0], k[1], k[2], TAU)),
                            ad.mean(temporal_order_loss(order_logit(s_q, k[1], k[2], phi), y)))
        return out

    return "total/query-encoder", f, params.arrays()


def _primitive_target(rng) -> tuple[str, Callable, list[np.ndarray]]:
    """linear -> relu -> l2_normalize -> dot chain."""
    while True:
        x = rng.normal(size=(1, 3))
        W = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        if np.min(np.abs(x @ W + b)) > KINK_MARGIN and np.any(x @ W + b > 0):
            break
    other = rng.normal(size=4)

    def f(p):
        h = ad.relu(ad.linear(p[0], p[1], p[2]))
        return ad.dot(ad.l2_normalize(ad.reshape(h, (4,))), ad.constant(other))

    return "primitives/linear-relu-normalize-dot", f, [x, W, b]


def run_suite(points: int = 100, seed: int = 0, step: float = 1e-5, tol: float = 1e-4,
              fault: str | None = None) -> list[TargetReport]:
    """Check every target at ``points`` random parameter draws.

    ``fault`` names an op whose backward rule is sign-flipped for the run.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, TargetReport] = {}

    def record(name, f, theta):
        rep = ad.grad_check(f, theta, step, tol)
        err = max(rep["errors"])
        prev = worst.get(name)
        n = prev.points + 1 if prev else 1
        if prev is None or err > prev.max_rel_error:
            worst[name] = TargetReport(name, n, err, rep["worst"], err < tol)
        else:
            prev.points = n

    def body():
        for _ in range(points):
            for name, f, theta in _loss_targets(rng):
                record(name, f, theta)
            record(*_encoder_target(rng))
            record(*_primitive_target(rng))

    if fault is None:
        body()
    else:
        with ad.inject_fault(fault):
            body()
    return list(worst.values())


def format_report(reports: list[TargetReport], elapsed: float | None = None) -> str:
    lines = [f"{'target':40s} {'points':>6s} {'max rel err':>12s}  result"]
    for r in reports:
        status = "PASS" if r.passed else f"FAIL (param {r.worst[0]}, coord {r.worst[1]})"
        lines.append(f"{r.name:40s} {r.points:6d} {r.max_rel_error:12.3e}  {status}")
    if elapsed is not None:
        lines.append(f"elapsed {elapsed:.1f}s")
    return "\n".join(lines)


def main_report(points: int = 100, seed: int = 0, fault: str | None = None) -> tuple[bool, str]:
    t0 = time.perf_counter()
    reports = run_suite(points, seed, fault=fault)
    text = format_report(reports, time.perf_counter() - t0)
    return all(r.passed for r in reports), text
