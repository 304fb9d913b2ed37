"""Exact propagation of univariate piecewise-affine networks.

Every hidden neuron is tracked by its values on a knot set shared by the
whole layer. Between knots all neurons are affine, so affine combinations
act on the value matrix directly and a max only needs the crossing points
of its two arguments inserted as new knots.
"""
import logging
from typing import Tuple

import numpy as np

from apps.convex_nets.models import ConvexNet
from apps.convex_nets.schemas import GateKind
from apps.theory_lab.models import PiecewiseAffine1D
from core.exceptions import ContractViolation, UnsupportedGate

logger = logging.getLogger(__name__)

KNOT_MERGE_TOL = 1e-12
KINK_TOL = 1e-9


def _merge(knots: np.ndarray) -> np.ndarray:
    knots = np.unique(knots)
    keep = np.concatenate([[True], np.diff(knots) > KNOT_MERGE_TOL])
    merged = knots[keep]
    # the right end is never dropped in favour of a near neighbour
    merged[-1] = knots[-1]
    return merged


def _resample(t: np.ndarray, F: np.ndarray, t_new: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(t, t_new, side="right") - 1, 0, t.size - 2)
    w = (t_new - t[idx]) / (t[idx + 1] - t[idx])
    return F[:, idx] * (1.0 - w) + F[:, idx + 1] * w


def pointwise_max(t: np.ndarray, A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise max of two families given on knots t; returns the refined knots and values"""
    D = A - B
    left, right = D[:, :-1], D[:, 1:]
    rows, seg = np.nonzero(left * right < 0)
    if rows.size:
        frac = left[rows, seg] / (left[rows, seg] - right[rows, seg])
        roots = t[seg] + (t[seg + 1] - t[seg]) * frac
        t_new = _merge(np.concatenate([t, roots]))
        A = _resample(t, A, t_new)
        B = _resample(t, B, t_new)
        t = t_new
    return t, np.maximum(A, B)


def _gate(net: ConvexNet, t: np.ndarray, a1: np.ndarray, a2) -> Tuple[np.ndarray, np.ndarray]:
    kind = net.gate.kind
    if kind == GateKind.MAX:
        return pointwise_max(t, a1, a2)
    if kind == GateKind.RELU:
        return pointwise_max(t, a1, np.zeros_like(a1))
    if kind == GateKind.LEAKY_RELU:
        return pointwise_max(t, a1, net.gate.alpha * a1)
    raise UnsupportedGate(f"exact propagation needs a piecewise-affine gate, got {kind.value}")


def _drop_fake_kinks(t: np.ndarray, v: np.ndarray) -> PiecewiseAffine1D:
    slopes = np.diff(v) / np.diff(t)
    jump = np.abs(np.diff(slopes))
    scale = np.maximum(1.0, np.maximum(np.abs(slopes[:-1]), np.abs(slopes[1:])))
    keep = np.concatenate([[True], jump > KINK_TOL * scale, [True]])
    return PiecewiseAffine1D.from_knots(t[keep], v[keep])


def pwa_of_network(net: ConvexNet, interval: Tuple[float, float] = (0.0, 1.0)) -> PiecewiseAffine1D:
    """Exact piecewise-affine form of a 1-D network restricted to [lo, hi]"""
    if net.input_dim != 1:
        raise ContractViolation(f"exact propagation needs a univariate network, got input_dim={net.input_dim}")
    if net.Wq is not None:
        raise ContractViolation("the quadratic first layer is not piecewise affine")
    if not net.gate.piecewise_affine:
        raise UnsupportedGate(f"exact propagation needs a piecewise-affine gate, got {net.gate.kind.value}")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ContractViolation(f"empty interval [{lo}, {hi}]")

    t = np.array([lo, hi])
    Z = np.zeros((0, 2))
    for layer in net.layers:
        lanes = []
        for k in range(1, layer.lanes + 1):
            V = layer.V(k).detach().numpy()
            W = layer.W(k).detach().numpy()[:, 0]
            b = layer.b(k).detach().numpy()
            lanes.append(V @ Z + np.outer(W, t) + b[:, None])
        t, Z = _gate(net, t, lanes[0], lanes[1] if len(lanes) == 2 else None)

    out = net.out
    v = (out.V_eff.detach().numpy() @ Z + np.outer(out.W.detach().numpy()[:, 0], t) + out.b.detach().numpy()[:, None])[0]
    pwa = _drop_fake_kinks(t, v)
    logger.debug(f"Propagated {net!r}: {t.size - 1} segments, {pwa.piece_count} pieces")
    return pwa
