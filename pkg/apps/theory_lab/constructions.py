"""Explicit max-gate networks that approximate x², xⁿ and ‖x‖² on the unit cube.

Networks are assembled from plain weight lists (one ``Lane`` per gate lane and
layer) and loaded into a ``ConvexNet`` without reparametrization, so the
weights written here are exactly the effective weights.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from apps.convex_nets.models import ConvexNet
from apps.convex_nets.schemas import Arch, GateKind, GateSpec
from core.exceptions import ContractViolation, UnsupportedGate

logger = logging.getLogger(__name__)


@dataclass
class Lane:
    V: np.ndarray
    W: np.ndarray
    b: np.ndarray


def unpack(net: ConvexNet) -> Tuple[List[List[Lane]], Lane]:
    layers = []
    for layer in net.layers:
        layers.append(
            [
                Lane(
                    layer.V(k).detach().numpy().copy(),
                    layer.W(k).detach().numpy().copy(),
                    layer.b(k).detach().numpy().copy(),
                )
                for k in range(1, layer.lanes + 1)
            ]
        )
    out = Lane(
        net.out.V_eff.detach().numpy().copy(),
        net.out.W.detach().numpy().copy(),
        net.out.b.detach().numpy().copy(),
    )
    return layers, out


def assemble(
    layers: Sequence[Sequence[Lane]],
    out: Lane,
    input_dim: int,
    gate: GateSpec,
    arch: Arch = Arch.HYCNN,
) -> ConvexNet:
    net = ConvexNet(arch, input_dim, [lanes[0].V.shape[0] for lanes in layers], gate, reparam=False)
    for layer, lanes in zip(net.layers, layers):
        for k, lane in enumerate(lanes, start=1):
            layer.assign(k, V=lane.V, W=lane.W, b=lane.b)
    net.out.assign(V=out.V, W=out.W, b=out.b)
    return net


def _require_max(*nets: ConvexNet) -> None:
    for net in nets:
        if net.gate.kind != GateKind.MAX or net.arch != Arch.HYCNN:
            raise ContractViolation(f"expected a max-gate HyCNN, got {net!r}")


# ---------------------------------------------------------------- x² on [0,1]


def quadratic_constants(widths: Sequence[int]):
    """Grid sizes D_ℓ, the shared constant b and the sequence a_ℓ"""
    L = len(widths)
    D = np.cumprod(widths).astype(np.float64)
    b = 4.0 / (L * D[-1])
    a = [4.0 / widths[0]]
    for d_next in widths[1:]:
        a.append((a[-1] - (d_next - 1) * b) / d_next)
    return D, b, a


def quadratic_net(widths: Sequence[int], positive: bool = False) -> ConvexNet:
    """Interpolant of x² on the grid k/∏d_ℓ, shifted down by 1/(8∏d_ℓ²) unless ``positive``.

    Layer ℓ+1 neuron 0 carries u_ℓ; neuron j ≥ 1 is max(φ_ℓ, ψ_ℓ + Δ_ℓx/2 − Δ_ℓj/(2D_{ℓ+1}))
    with Δ_ℓ = a_ℓ − b. φ, ψ and u are kept as non-negative combinations of the
    current layer.
    """
    widths = [int(w) for w in widths]
    if not widths or any(w < 2 or w % 2 for w in widths):
        raise ContractViolation(f"quadratic construction needs even widths ≥ 2, got {widths}")
    D, b, a = quadratic_constants(widths)

    d1 = widths[0]
    k = np.arange(d1)
    first = Lane(np.zeros((d1, 0)), (k >= 1).astype(float).reshape(-1, 1), np.where(k >= 1, -k / d1, 0.0))
    idle = Lane(np.zeros((d1, 0)), np.zeros((d1, 1)), np.zeros(d1))
    layers = [[first, idle]]

    odd = (k % 2 == 1) & (k >= 1)
    even = (k % 2 == 0) & (k >= 1)
    u = np.where(k >= 1, 2.0 / d1, 0.0)
    phi = np.where(odd, a[0], 0.0) + np.where(even, b, 0.0)
    psi = np.where(odd, b, 0.0) + np.where(even, a[0], 0.0)

    for ell, d_next in enumerate(widths[1:]):
        delta = a[ell] - b
        j = np.arange(d_next)
        rows = j >= 1
        V1 = np.where(rows[:, None], phi[None, :], u[None, :])
        V2 = np.where(rows[:, None], psi[None, :], 0.0)
        W2 = np.where(rows, delta / 2.0, 0.0).reshape(-1, 1)
        b2 = np.where(rows, -delta * j / (2.0 * D[ell + 1]), 0.0)
        layers.append(
            [
                Lane(V1, np.zeros((d_next, 1)), np.zeros(d_next)),
                Lane(V2, W2, b2),
            ]
        )

        a_next = a[ell + 1]
        j_odd = (j % 2 == 1) & rows
        j_even = (j % 2 == 0) & rows
        r = np.where(j_odd, 2 * a_next / delta, 0.0) + np.where(j_even, 2 * b / delta, 0.0)
        s = np.where(j_odd, 2 * b / delta, 0.0) + np.where(j_even, 2 * a_next / delta, 0.0)
        s[0] = max(D[ell] / 2.0 * (a_next - b * s[1:].sum()), 0.0)
        phi, psi = r, s
        u = 2.0 / (D[ell + 1] * (a_next + b)) * (phi + psi)

    DL = D[-1]
    out = Lane(u.reshape(1, -1), np.array([[1.0 / DL]]), np.array([0.0 if positive else -1.0 / (8 * DL**2)]))
    return assemble(layers, out, 1, GateSpec.max())


def width2_net(L: int) -> ConvexNet:
    """Width-2 net with output x + Σ_{k≤L} 4^{−k}(ψᵏ − 1) − 2^{−2L−3}, ψ(u) = |2u − 1|.

    Hidden layer m holds (q_m + r_m, q_m) with r_m = 2^{1−2m}ψᵐ and
    q_m = Σ_{k<m} 4^{−k}ψᵏ; max(p − β, q + β) − (p + q)/2 = |r/2 − β| folds the sawtooth.
    """
    if L < 1:
        raise ContractViolation(f"width-2 construction needs L ≥ 1, got {L}")
    layers = [
        [
            Lane(np.zeros((2, 0)), np.array([[1.0], [0.0]]), np.array([-0.5, 0.0])),
            Lane(np.zeros((2, 0)), np.array([[-1.0], [0.0]]), np.array([0.5, 0.0])),
        ]
    ]
    for m in range(1, L):
        beta = 2.0 ** (-2 * m - 1)
        layers.append(
            [
                Lane(np.array([[1.0, 0.0], [0.5, 0.5]]), np.zeros((2, 1)), np.array([-beta, 0.0])),
                Lane(np.array([[0.0, 1.0], [0.5, 0.5]]), np.zeros((2, 1)), np.array([beta, 0.0])),
            ]
        )
    bias = -sum(4.0**-k for k in range(1, L + 1)) - 2.0 ** (-2 * L - 3)
    out = Lane(np.array([[0.5, 0.5]]), np.array([[1.0]]), np.array([bias]))
    return assemble(layers, out, 1, GateSpec.max())


# ---------------------------------------------------------------- algebra on networks


def widen_inputs(
    h: ConvexNet, extra: Sequence[Sequence[np.ndarray]], out_extra: np.ndarray, keep_bias: bool = True
) -> ConvexNet:
    layers, out = unpack(h)
    for lanes, column in zip(layers, extra):
        for k, lane in enumerate(lanes):
            lane.W = np.hstack([lane.W, column[k]])
            if not keep_bias:
                lane.b = np.zeros_like(lane.b)
    out.W = np.hstack([out.W, out_extra])
    if not keep_bias:
        out.b = np.zeros_like(out.b)
    return assemble(layers, out, h.input_dim + 1, h.gate, h.arch)


def lift(h: ConvexNet) -> ConvexNet:
    """h(y) seen as a function of (y, x) that ignores x"""
    layers, _ = unpack(h)
    extra = [[np.zeros((lane.W.shape[0], 1)) for lane in lanes] for lanes in layers]
    return widen_inputs(h, extra, np.zeros((1, 1)))


def homogenize(h: ConvexNet) -> ConvexNet:
    """h̃ with h̃(u·y, y) = y·h(u) for y ≥ 0: every bias becomes the weight of a trailing input"""
    if h.gate.kind not in (GateKind.MAX, GateKind.RELU, GateKind.LEAKY_RELU):
        raise UnsupportedGate(f"homogenization needs a positively homogeneous gate, got {h.gate.kind.value}")
    if h.arch not in (Arch.HYCNN, Arch.ICNN):
        raise ContractViolation(f"homogenization needs skip connections in every layer, got {h.arch.value}")
    layers, out = unpack(h)
    extra = [[lane.b.reshape(-1, 1) for lane in lanes] for lanes in layers]
    return widen_inputs(h, extra, out.b.reshape(1, 1), keep_bias=False)


def compose_hycnn(g: ConvexNet, h: ConvexNet) -> ConvexNet:
    """Single HyCNN computing x ↦ h(g(x), x); slot 0 of h's input receives g(x).

    g's output is carried through h's layers by one extra neuron max(y, y).
    """
    _require_max(g, h)
    d = g.input_dim
    if h.input_dim != d + 1:
        raise ContractViolation(f"h must take (y, x) with {d + 1} inputs, got {h.input_dim}")
    g_layers, g_out = unpack(g)
    h_layers, h_out = unpack(h)
    for lanes in h_layers:
        for lane in lanes:
            if np.any(lane.W[:, 0] < 0):
                raise ContractViolation("h must be non-decreasing in its first input")
    if h_out.W[0, 0] < 0:
        raise ContractViolation("h must be non-decreasing in its first input")

    layers = [list(lanes) for lanes in g_layers]
    p_prev = None
    for index, lanes in enumerate(h_layers):
        composed = []
        for lane in lanes:
            M, N, c = lane.W[:, :1], lane.W[:, 1:], lane.b
            width = M.shape[0]
            if index == 0:
                V = np.vstack([M @ g_out.V, g_out.V])
                W = np.vstack([M @ g_out.W + N, g_out.W])
                b = np.concatenate([M[:, 0] * g_out.b[0] + c, g_out.b])
            else:
                carry = np.zeros((1, p_prev + 1))
                carry[0, -1] = 1.0
                V = np.vstack([np.hstack([lane.V, M]), carry])
                W = np.vstack([N, np.zeros((1, d))])
                b = np.concatenate([c, [0.0]])
            composed.append(Lane(V, W, b))
        layers.append(composed)
        p_prev = width
    out = Lane(np.hstack([h_out.V, h_out.W[:, :1]]), h_out.W[:, 1:], h_out.b)
    net = assemble(layers, out, d, g.gate)
    logger.debug(f"Composed {g!r} with {h!r} into {net!r}")
    return net


def pad_to_width(net: ConvexNet, width: int) -> ConvexNet:
    """Append inert neurons (both lanes identically zero) up to ``width`` per layer"""
    layers, out = unpack(net)
    padded = []
    prev_extra = 0
    for lanes in layers:
        rows = lanes[0].V.shape[0]
        extra = width - rows
        if extra < 0:
            raise ContractViolation(f"layer already has {rows} > {width} neurons")
        new_lanes = []
        for lane in lanes:
            V = np.hstack([lane.V, np.zeros((rows, prev_extra))])
            new_lanes.append(
                Lane(
                    np.vstack([V, np.zeros((extra, V.shape[1]))]),
                    np.vstack([lane.W, np.zeros((extra, lane.W.shape[1]))]),
                    np.concatenate([lane.b, np.zeros(extra)]),
                )
            )
        padded.append(new_lanes)
        prev_extra = extra
    out = Lane(np.hstack([out.V, np.zeros((1, prev_extra))]), out.W, out.b)
    return assemble(padded, out, net.input_dim, net.gate, net.arch)


# ---------------------------------------------------------------- xⁿ on [0,1]


def monomial_digits(n: int) -> List[int]:
    """b_1 … b_{k−1} with 2ᵏ − n = Σ b_i 2^{i−1}, k = ⌈log₂ n⌉"""
    k = math.ceil(math.log2(n))
    rest = 2**k - n
    return [(rest >> (i - 1)) & 1 for i in range(1, k)]


def monomial_nets(n: int, L: int, m: int) -> List[ConvexNet]:
    """Iterates h_1 ≈ x², …, h_k ≈ xⁿ, each built by squaring (D₀) or squaring over x (D₁) the previous one"""
    if n < 2:
        raise ContractViolation(f"monomial degree must be ≥ 2, got {n}")
    if L < 1:
        raise ContractViolation(f"depth must be ≥ 1, got {L}")
    if m < 3 or m % 2 == 0:
        raise ContractViolation(f"monomial construction needs an odd width m ≥ 3, got {m}")
    square = quadratic_net([m - 1] * L, positive=True)
    digits = monomial_digits(n)
    k = len(digits) + 1

    h = pad_to_width(square, m)
    iterates = [h]
    for i in range(1, k):
        if digits[k - i - 1] == 0:
            h = compose_hycnn(h, lift(square))
        else:
            h = compose_hycnn(h, homogenize(square))
        iterates.append(h)
    logger.info(f"Built x^{n} approximation with {iterates[-1].depth} layers of width {m}")
    return iterates


# ---------------------------------------------------------------- ‖x‖² on [0,1]^d


def _even_part(n: int) -> int:
    return n if n % 2 == 0 else n - 1


def multiquad_bound(d: int, L: int, m: int, p: int, q: int) -> float:
    base = (m - 1) // q - 1
    depth = L // p
    if p * q < d or base < 1 or depth < 1:
        return math.inf
    return d / 8.0 * float(base) ** (-2 * depth)


def best_multiquad_plan(d: int, L: int, m: int) -> Tuple[int, int, float]:
    best = (0, 0, math.inf)
    for p in range(1, L + 1):
        q = math.ceil(d / p)
        bound = multiquad_bound(d, L, m, p, q)
        if bound < best[2]:
            best = (p, q, bound)
    if not math.isfinite(best[2]):
        raise ContractViolation(f"no block plan fits d={d} into depth {L} and width {m}")
    return best


def multivariate_quadratic_net(d: int, L: int, m: int, plan: Optional[Tuple[int, int]] = None) -> ConvexNet:
    """q parallel copies of a univariate square net per block of ⌊L/p⌋ layers plus a running-sum neuron.

    The running sum is max(acc + finished block outputs, −d), which never
    clips on [0,1]^d.
    """
    if m < 3:
        raise ContractViolation(f"multivariate construction needs m ≥ 3, got {m}")
    p, q = plan if plan is not None else best_multiquad_plan(d, L, m)[:2]
    if not math.isfinite(multiquad_bound(d, L, m, p, q)):
        raise ContractViolation(f"block plan (p={p}, q={q}) does not fit d={d}, L={L}, m={m}")
    w = _even_part((m - 1) // q)
    depth = L // p
    block_layers, block_out = unpack(quadratic_net([w] * depth))
    acc = m - 1

    def empty_lane(fan_in: int) -> Lane:
        return Lane(np.zeros((m, fan_in)), np.zeros((m, d)), np.zeros(m))

    # coordinates finishing at each layer, keyed by the layer that absorbs them
    layers = []
    finished: List[Tuple[int, int]] = []
    for t in range(L):
        lanes = [empty_lane(0 if t == 0 else m), empty_lane(0 if t == 0 else m)]
        block, step = divmod(t, depth)
        if block < p:
            for slot, coord in enumerate(range(block * q, min(block * q + q, d))):
                rows = slice(slot * w, slot * w + w)
                for src, dst in zip(block_layers[step], lanes):
                    if step > 0:
                        dst.V[rows, rows] = src.V
                    dst.W[rows, coord] = src.W[:, 0]
                    dst.b[rows] = src.b
        lanes[1].b[acc] = -float(d)
        if t > 0:
            lanes[0].V[acc, acc] = 1.0
            for slot, coord in finished:
                rows = slice(slot * w, slot * w + w)
                lanes[0].V[acc, rows] += block_out.V[0]
                lanes[0].W[acc, coord] += block_out.W[0, 0]
                lanes[0].b[acc] += block_out.b[0]
        finished = []
        if block < p and step == depth - 1:
            finished = [(slot, coord) for slot, coord in enumerate(range(block * q, min(block * q + q, d)))]
        layers.append(lanes)

    out = Lane(np.zeros((1, m)), np.zeros((1, d)), np.zeros(1))
    out.V[0, acc] = 1.0
    for slot, coord in finished:
        rows = slice(slot * w, slot * w + w)
        out.V[0, rows] += block_out.V[0]
        out.W[0, coord] += block_out.W[0, 0]
        out.b[0] += block_out.b[0]
    net = assemble(layers, out, d, GateSpec.max())
    logger.info(f"Built ‖x‖² approximation on d={d} with plan p={p}, q={q}, block width {w}")
    return net
