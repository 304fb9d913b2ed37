import itertools
import logging
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from apps.convex_nets.models import ConvexNet
from apps.convex_nets.schemas import Arch, GateKind, GateSpec
from apps.convex_nets.services import forward, icnn_as_hycnn, init_hycnn, init_icnn_hoedt, restrict_to_line
from apps.theory_lab.constructions import (
    Lane,
    assemble,
    best_multiquad_plan,
    monomial_nets,
    multiquad_bound,
    multivariate_quadratic_net,
    quadratic_net,
    unpack,
    width2_net,
)
from apps.theory_lab.models import PiecewiseAffine1D
from apps.theory_lab.pwa import pwa_of_network
from apps.theory_lab.schemas import (
    CertificateMethod,
    ConstructionCertificate,
    DiagonalFloorReport,
    EmbeddingReport,
    LowerBoundReport,
    PieceCountReport,
)
from core.exceptions import ConfigurationError, ContractViolation, UnsupportedGate
from core.tensor import Rng

logger = logging.getLogger(__name__)

CERT_RTOL = 1e-9
GRID_POINTS = 100_000


# ---------------------------------------------------------------- exact errors


def sup_error_vs_power(p: PiecewiseAffine1D, n: int, interval: Tuple[float, float] = (0.0, 1.0)) -> float:
    """Exact sup |p(x) − xⁿ| over the interval, piece by piece.

    On a piece with slope s the error is extremal at the piece ends or where
    n·x^{n−1} = s.
    """
    lo, hi = interval
    if n < 1:
        raise ContractViolation(f"power must be ≥ 1, got {n}")
    if n > 2 and lo < 0:
        raise ContractViolation("exact error against xⁿ with n > 2 is only available on x ≥ 0")
    worst = 0.0
    for left, right, s, c in p.pieces():
        a, b = max(left, lo), min(right, hi)
        if a > b:
            continue
        candidates = [a, b]
        if n == 2:
            candidates.append(s / 2.0)
        elif n > 2 and s >= 0:
            candidates.append((s / n) ** (1.0 / (n - 1)))
        xs = np.array([x for x in candidates if a <= x <= b])
        worst = max(worst, float(np.max(np.abs(s * xs + c - xs**n))))
    return worst


def sup_error_vs_quadratic(p: PiecewiseAffine1D, interval: Tuple[float, float] = (0.0, 1.0)) -> float:
    return sup_error_vs_power(p, 2, interval)


def kink_bound(widths: Sequence[int]) -> int:
    """Most kinks a univariate (leaky) ReLU ICNN with these widths can have: d₁ + 2Σ_{ℓ≥2} d_ℓ"""
    widths = list(widths)
    return int(widths[0] + 2 * sum(widths[1:]))


def piece_bound(widths: Sequence[int]) -> int:
    """Most affine pieces, one more than the kink bound"""
    return kink_bound(widths) + 1


def icnn_sup_floor(widths: Sequence[int], input_dim: int = 1) -> float:
    return input_dim / (8.0 * piece_bound(widths) ** 2)


def _certificate(
    target: str,
    widths: Sequence[int],
    claimed: float,
    measured: float,
    method: CertificateMethod,
    points: Optional[int] = None,
    **details: float,
) -> ConstructionCertificate:
    cert = ConstructionCertificate(
        target=target,
        widths=list(widths),
        claimed_bound=claimed,
        measured=measured,
        method=method,
        points=points,
        passed=measured <= claimed * (1.0 + CERT_RTOL),
        details=details,
    )
    level = logging.INFO if cert.passed else logging.WARNING
    logger.log(level, f"Certificate {target} {list(widths)}: measured {measured:.6e} vs bound {claimed:.6e}")
    return cert


# ---------------------------------------------------------------- constructions


def build_quadratic_hycnn(widths: Sequence[int], positive: bool = False) -> Tuple[ConvexNet, ConstructionCertificate]:
    net = quadratic_net(widths, positive=positive)
    D = float(np.prod(widths))
    claimed = (0.25 if positive else 0.125) / D**2
    pwa = pwa_of_network(net, (0.0, 1.0))
    measured = sup_error_vs_quadratic(pwa)
    return net, _certificate("x^2", widths, claimed, measured, CertificateMethod.EXACT, pieces=pwa.piece_count)


def build_quadratic_width2(L: int) -> Tuple[ConvexNet, ConstructionCertificate]:
    net = width2_net(L)
    pwa = pwa_of_network(net, (0.0, 1.0))
    measured = sup_error_vs_quadratic(pwa)
    return net, _certificate("x^2", [2] * L, 2.0 ** (-2 * L - 3), measured, CertificateMethod.EXACT, pieces=pwa.piece_count)


def monomial_bound(n: int, L: int, m: int) -> float:
    return n / 2.0 * float(m - 1) ** (-2 * L)


def build_monomial_hycnn(
    n: int, L: int, m: int, grid_points: int = GRID_POINTS
) -> Tuple[ConvexNet, ConstructionCertificate]:
    """xⁿ on [0,1]; the certificate takes the exact per-piece error and cross-checks on a grid"""
    iterates = monomial_nets(n, L, m)
    net = iterates[-1]
    check = np.linspace(0.0, 1.0, 10_001)
    slack = 0.0
    for h in iterates:
        values = np.atleast_1d(forward(h, check[:, None]))
        slack = max(slack, float(np.max(np.maximum(-values, values - check))))
    pwa = pwa_of_network(net, (0.0, 1.0))
    exact = sup_error_vs_power(pwa, n)
    grid = np.linspace(0.0, 1.0, grid_points)
    grid_error = float(np.max(np.abs(np.atleast_1d(forward(net, grid[:, None])) - grid**n)))
    cert = _certificate(
        f"x^{n}",
        net.widths,
        monomial_bound(n, L, m),
        max(exact, grid_error),
        CertificateMethod.EXACT,
        grid_error=grid_error,
        positivity_violation=slack,
        pieces=pwa.piece_count,
    )
    if slack > 1e-10:
        logger.warning(f"Iterate left 0 ≤ h ≤ x by {slack:.3e}")
        cert.passed = False
    return net, cert


def build_multivariate_quadratic(
    d: int,
    L: int,
    m: int,
    plan: Optional[Tuple[int, int]] = None,
    rng: Optional[Rng] = None,
    samples: int = GRID_POINTS,
) -> Tuple[ConvexNet, ConstructionCertificate]:
    """‖x‖² on [0,1]^d; checked on random points and on the diagonal t·1"""
    p, q = plan if plan is not None else best_multiquad_plan(d, L, m)[:2]
    net = multivariate_quadratic_net(d, L, m, (p, q))
    rng = rng or Rng(0, (d, L, m))
    X = rng.uniform(0.0, 1.0, (samples, d))
    t = np.linspace(0.0, 1.0, 10_001)
    X = np.vstack([X, np.outer(t, np.ones(d))])
    err = float(np.max(np.abs(np.atleast_1d(forward(net, X)) - (X**2).sum(axis=1))))
    cert = _certificate(
        "||x||^2",
        net.widths,
        multiquad_bound(d, L, m, p, q),
        err,
        CertificateMethod.GRID,
        points=X.shape[0],
        p=p,
        q=q,
    )
    return net, cert


def build_construction(
    target: str,
    widths: Optional[Sequence[int]] = None,
    L: int = 2,
    n: int = 2,
    m: int = 3,
    d: int = 2,
    positive: bool = False,
    rng: Optional[Rng] = None,
) -> Tuple[ConvexNet, ConstructionCertificate]:
    """Dispatch on quadratic | quadratic2 | monomial | multiquad"""
    if target == "quadratic":
        if not widths:
            raise ContractViolation("widths are required for the quadratic construction")
        return build_quadratic_hycnn(widths, positive=positive)
    if target == "quadratic2":
        return build_quadratic_width2(L)
    if target == "monomial":
        return build_monomial_hycnn(n, L, m)
    if target == "multiquad":
        return build_multivariate_quadratic(d, L, m, rng=rng)
    raise ConfigurationError(f"Unknown construction target: {target}")


# ---------------------------------------------------------------- lower bounds


def chebyshev_lines(knots: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Best sup-norm line to x² on every cell [a, b]: the secant lowered by (b − a)²/8.

    ``knots`` has shape (..., k + 1); slopes and intercepts have shape (..., k).
    """
    a, b = knots[..., :-1], knots[..., 1:]
    return a + b, -a * b - (b - a) ** 2 / 8.0


def envelope_error(slopes: np.ndarray, intercepts: np.ndarray) -> np.ndarray:
    """Exact sup_{[0,1]} |max_i ℓ_i(x) − x²| for batches of lines, shape (B, k) -> (B,).

    Above x² the worst point of line i is its tangency x = s_i/2; below x² the
    gap is convex between kinks, so the worst point is 0, 1 or a crossing of two lines.
    """
    B, k = slopes.shape
    i, j = np.triu_indices(k, 1)
    crossings = (intercepts[:, i] - intercepts[:, j]) / (slopes[:, j] - slopes[:, i])
    points = np.clip(np.concatenate([np.zeros((B, 1)), np.ones((B, 1)), crossings], axis=1), 0.0, 1.0)
    envelope = np.max(points[:, :, None] * slopes[:, None, :] + intercepts[:, None, :], axis=2)
    below = np.max(points**2 - envelope, axis=1)
    tangency = np.clip(slopes / 2.0, 0.0, 1.0)
    above = np.max(slopes * tangency + intercepts - tangency**2, axis=1)
    return np.maximum(below, above)


def envelope_pwa(slopes: np.ndarray, intercepts: np.ndarray) -> PiecewiseAffine1D:
    """max_i ℓ_i on [0, 1] as an exact piecewise-affine function"""
    i, j = np.triu_indices(slopes.size, 1)
    crossings = (intercepts[i] - intercepts[j]) / (slopes[j] - slopes[i])
    knots = np.unique(np.concatenate([[0.0, 1.0], crossings[(crossings > 0.0) & (crossings < 1.0)]]))
    knots = knots[np.concatenate([[True], np.diff(knots) > 1e-12])]
    knots[-1] = 1.0
    values = np.max(knots[:, None] * slopes[None, :] + intercepts[None, :], axis=1)
    return PiecewiseAffine1D.from_knots(knots, values)


def _grid_partitions(k: int, N: int, chunk: int) -> Iterator[np.ndarray]:
    """Knot arrays (0, j₁/N, …, j_{k−1}/N, 1) for every strictly increasing grid choice"""
    if k == 1:
        yield np.array([[0.0, 1.0]])
        return
    cuts = itertools.combinations(range(1, N), k - 1)
    while True:
        block = np.array(list(itertools.islice(cuts, chunk)), dtype=np.float64)
        if block.size == 0:
            return
        ends = np.ones((block.shape[0], 1))
        yield np.concatenate([0.0 * ends, block / N, ends], axis=1)


def lower_bound_search(k: int, resolution: int = 120, chunk: int = 100_000) -> LowerBoundReport:
    """Brute-force best sup error of convex k-piece fits of x² with breakpoints on the grid j/N.

    Each cell gets its Chebyshev line; the candidate is the upper envelope of
    those lines, which is convex with at most k pieces, and its error is computed
    exactly. The minimum over all grid partitions is reported next to 1/(8k²).
    """
    if not 1 <= k <= 5:
        raise ContractViolation(f"lower_bound_search supports 1 ≤ k ≤ 5, got {k}")
    N = int(resolution)
    if N < k:
        raise ContractViolation(f"resolution {N} cannot hold {k} cells")
    value, best_knots, candidates = np.inf, None, 0
    for knots in _grid_partitions(k, N, chunk):
        errors = envelope_error(*chebyshev_lines(knots))
        candidates += errors.size
        arg = int(np.argmin(errors))
        if errors[arg] < value:
            value, best_knots = float(errors[arg]), knots[arg]
    witness = envelope_pwa(*chebyshev_lines(best_knots))
    report = LowerBoundReport(
        k=k,
        resolution=N,
        candidates=candidates,
        value=value,
        floor=1.0 / (8.0 * k**2),
        breakpoints=best_knots[1:-1].tolist(),
        witness_error=sup_error_vs_quadratic(witness),
    )
    logger.info(f"Lower-bound search k={k}: {value:.6e} over {candidates} partitions (floor {report.floor:.6e})")
    return report


def diagonal_floor_check(net: ConvexNet) -> DiagonalFloorReport:
    """sup |f − ‖x‖²| along t·1_d against the ICNN floor d/(8K²)"""
    if net.arch != Arch.ICNN or net.gate.kind not in (GateKind.RELU, GateKind.LEAKY_RELU):
        raise UnsupportedGate(f"diagonal floor applies to (leaky) ReLU ICNNs, got {net!r}")
    d = net.input_dim
    line = restrict_to_line(net, np.ones(d))
    pwa = pwa_of_network(line, (0.0, 1.0))
    measured = d * sup_error_vs_quadratic(pwa.scaled(1.0 / d))
    floor = icnn_sup_floor(net.widths, d)
    return DiagonalFloorReport(
        input_dim=d,
        piece_bound=piece_bound(net.widths),
        measured=measured,
        floor=floor,
        passed=measured >= floor - 1e-9,
    )


def random_piece_counts(
    widths: Sequence[int],
    seeds: Sequence[int],
    gate: Optional[GateSpec] = None,
    interval: Tuple[float, float] = (-5.0, 5.0),
) -> List[PieceCountReport]:
    """Kinks of random univariate ICNNs against the kink bound, and their x² error against the floor"""
    gate = gate or GateSpec.relu()
    reports = [_piece_report(widths, seed, gate, Rng(seed).child("pieces"), interval) for seed in seeds]
    failed = [r.seed for r in reports if not r.passed]
    if failed:
        logger.warning(f"Piece bound or floor violated for seeds {failed}")
    return reports


def random_width_piece_counts(
    samples: int,
    rng: Rng,
    max_width: int = 6,
    max_depth: int = 4,
    interval: Tuple[float, float] = (-5.0, 5.0),
) -> List[PieceCountReport]:
    """Same check over ICNNs whose depth, widths and gate (ReLU or LeakyReLU) are drawn at random"""
    reports = []
    for i in range(samples):
        stream = rng.child("net", i)
        depth = int(stream.child("depth").integers(1, max_depth + 1))
        widths = [int(w) for w in stream.child("widths").integers(1, max_width + 1, size=depth)]
        gate = GateSpec.relu() if i % 2 == 0 else GateSpec.leaky_relu(0.2)
        reports.append(_piece_report(widths, i, gate, stream.child("init"), interval))
    failed = [(r.seed, r.widths) for r in reports if not r.passed]
    if failed:
        logger.warning(f"Piece bound or floor violated for {failed}")
    return reports


def _piece_report(
    widths: Sequence[int], seed: int, gate: GateSpec, rng: Rng, interval: Tuple[float, float]
) -> PieceCountReport:
    net = init_icnn_hoedt(widths, 1, rng, gate=gate)
    count = pwa_of_network(net, interval).piece_count
    error = sup_error_vs_quadratic(pwa_of_network(net, (0.0, 1.0)))
    floor = icnn_sup_floor(widths)
    return PieceCountReport(
        seed=seed,
        widths=list(widths),
        gate=gate.kind.value,
        pieces=count,
        kinks=count - 1,
        kink_bound=kink_bound(widths),
        piece_bound=piece_bound(widths),
        sup_error=error,
        floor=floor,
        passed=count - 1 <= kink_bound(widths) and error >= floor - 1e-9,
    )


# ---------------------------------------------------------------- embeddings


def icnn_to_hycnn(net: ConvexNet) -> ConvexNet:
    """Same function as a two-lane max-gate network: σ(a) = max(a, 0) or max(a, αa)"""
    if net.arch != Arch.ICNN:
        raise ContractViolation(f"expected an ICNN, got {net!r}")
    if net.gate.kind not in (GateKind.RELU, GateKind.LEAKY_RELU):
        raise UnsupportedGate(f"only ReLU and LeakyReLU ICNNs embed into max-gate nets, got {net.gate.kind.value}")
    scale = 0.0 if net.gate.kind == GateKind.RELU else net.gate.alpha
    layers, out = unpack(net)
    doubled = [[lane, Lane(scale * lane.V, scale * lane.W, scale * lane.b)] for (lane,) in layers]
    return assemble(doubled, out, net.input_dim, GateSpec.max())


def hycnn_to_relu(net: ConvexNet) -> ConvexNet:
    """Plain ReLU network of width 3m + 2d computing the same function.

    Each max neuron becomes (a¹)₊, (−a¹)₊, (a² − a¹)₊ so that
    max(a¹, a²) = (a¹)₊ − (−a¹)₊ + (a² − a¹)₊; the input rides along as x₊ and (−x)₊.
    """
    if net.gate.kind != GateKind.MAX:
        raise UnsupportedGate(f"expected a max gate, got {net.gate.kind.value}")
    if net.Wq is not None:
        raise ContractViolation("the quadratic first layer has no ReLU embedding")
    d = net.input_dim
    eye = np.eye(d)
    layers, out = unpack(net)
    relu_layers = []
    P = Q = None
    for index, (lane1, lane2) in enumerate(layers):
        m = lane1.b.size
        if index == 0:
            A1, A2 = lane1.W, lane2.W
        else:
            A1 = lane1.V @ P + lane1.W @ Q
            A2 = lane2.V @ P + lane2.W @ Q
        carry = np.eye(d) if index == 0 else Q
        rows = np.vstack([A1, -A1, A2 - A1, carry, -carry])
        bias = np.concatenate([lane1.b, -lane1.b, lane2.b - lane1.b, np.zeros(2 * d)])
        if index == 0:
            relu_layers.append([Lane(np.zeros((3 * m + 2 * d, 0)), rows, bias)])
        else:
            relu_layers.append([Lane(rows, np.zeros((3 * m + 2 * d, d)), bias)])
        I = np.eye(m)
        P = np.hstack([I, -I, I, np.zeros((m, 2 * d))])
        Q = np.hstack([np.zeros((d, 3 * m)), eye, -eye])
    relu_out = Lane(out.V @ P + out.W @ Q, np.zeros((1, d)), out.b)
    return assemble(relu_layers, relu_out, d, GateSpec.relu(), Arch.MLP)


def _max_delta(a: ConvexNet, b: ConvexNet, X: np.ndarray) -> float:
    fa = np.atleast_1d(forward(a, X))
    fb = np.atleast_1d(forward(b, X))
    return float(np.max(np.abs(fa - fb)) / max(1.0, float(np.max(np.abs(fa)))))


def embedding_checks(rng: Optional[Rng] = None, samples: int = 1000) -> EmbeddingReport:
    """ICNN ⊂ HyCNN ⊂ ReLU nets, plus the depth separation witness"""
    rng = rng or Rng(0)
    d = 2
    X = rng.child("inputs").uniform(-3.0, 3.0, (samples, d))
    relu_icnn = init_icnn_hoedt([64, 64], d, rng.child("icnn", "relu"))
    leaky_icnn = init_icnn_hoedt([64, 64], d, rng.child("icnn", "leaky"), gate=GateSpec.leaky_relu(0.2))
    hycnn = init_hycnn([4, 4, 4], d, rng.child("hycnn"))
    relu_net = hycnn_to_relu(hycnn)

    single_gate = max(
        float(np.max(np.abs(forward(icnn, X) - forward(icnn_as_hycnn(icnn), X)))) for icnn in (relu_icnn, leaky_icnn)
    )
    deltas = [
        single_gate,
        _max_delta(relu_icnn, icnn_to_hycnn(relu_icnn), X),
        _max_delta(leaky_icnn, icnn_to_hycnn(leaky_icnn), X),
        _max_delta(hycnn, relu_net, X),
    ]
    _, witness = build_quadratic_hycnn([2, 2, 2, 2])
    budget = 0
    while 1.0 / (8.0 * (budget + 1) ** 2) > witness.measured * (1.0 + CERT_RTOL):
        budget += 1
    report = EmbeddingReport(
        samples=samples,
        icnn_single_gate_max_delta=single_gate,
        icnn_relu_max_delta=deltas[1],
        icnn_leaky_max_delta=deltas[2],
        relu_network_width=relu_net.widths[0],
        hycnn_to_relu_max_delta=deltas[3],
        witness_error=witness.measured,
        witness_beats_piece_budget=budget,
        passed=single_gate == 0.0 and max(deltas) <= 1e-12 and witness.passed,
    )
    logger.info(f"Embedding checks: max delta {max(deltas):.3e}, witness beats ICNNs with ≤ {budget} pieces")
    return report
