import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from apps.convex_nets.models import ConvexNet, ForwardTrace
from apps.convex_nets.schemas import Arch, ConvexityReport, GateSpec, InitDiagnostics, WeightStyle
from core.exceptions import ConfigurationError, ContractViolation
from core.tensor import TORCH_DTYPE, Rng, sample_lognormal

logger = logging.getLogger(__name__)


def to_tensor(x: Any) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(TORCH_DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=TORCH_DTYPE)


def forward(net: ConvexNet, x: Any) -> Union[float, np.ndarray]:
    """Network output for one input (scalar) or a batch of rows (vector)"""
    with torch.no_grad():
        out = net(to_tensor(x))
    return float(out) if out.dim() == 0 else out.numpy()


def input_gradient(net: ConvexNet, x: Any) -> np.ndarray:
    """∇ₓ net(x), row by row for a batch"""
    xt = to_tensor(x).detach().clone().requires_grad_(True)
    out = net(xt)
    (grad,) = torch.autograd.grad(out.sum(), xt)
    return grad.detach().numpy()


def transport(net: torch.nn.Module, x: Any, create_graph: bool = False) -> torch.Tensor:
    """Batched ∇ₓ of any scalar potential module, kept in torch"""
    xt = to_tensor(x)
    if not xt.requires_grad:
        xt = xt.detach().clone().requires_grad_(True)
    out = net(xt)
    (grad,) = torch.autograd.grad(out.sum(), xt, create_graph=create_graph)
    return grad


# ---------------------------------------------------------------- initializers


def hycnn_weight_mean(fan_in: int) -> float:
    return (fan_in**2 + (1.0 - 1.0 / math.pi) * fan_in) ** -0.5


def hycnn_weight_var(fan_in: int) -> float:
    return 1.0 / (4.0 * fan_in)


def hycnn_bias(fan_in: int) -> float:
    return -math.sqrt(fan_in / (2.0 * math.pi * fan_in + 2.0 * math.pi - 2.0))


def hoedt_constants(fan_in: int) -> Tuple[float, float, float]:
    """(μ_W, σ_W², μ_b) for an ICNN layer with the given fan-in"""
    D = 6.0 * (math.pi - 1.0) + (fan_in - 1) * (3.0 * math.sqrt(3.0) + 2.0 * math.pi - 6.0)
    return math.sqrt(6.0 * math.pi / (fan_in * D)), 1.0 / fan_in, -math.sqrt(3.0 * fan_in / D)


def _correlated_normal(rng: Rng, shape: Tuple[int, ...], lanes: int, scale: float, rho: float) -> List[np.ndarray]:
    """One N(0, scale²) draw per lane; all rows and lanes share a √ρ component"""
    shared = rng.child("shared").normal(0.0, scale, shape[1:])
    draws = []
    for k in range(1, lanes + 1):
        own = rng.child("lane", k).normal(0.0, scale, shape)
        draws.append(math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * own)
    return draws


def init_hycnn(
    shape: Sequence[int],
    input_dim: int,
    rng: Rng,
    gate: Optional[GateSpec] = None,
    arch: Arch = Arch.HYCNN,
    first_layer_correlation: float = 0.5,
    reparam: bool = True,
) -> ConvexNet:
    """HyCNN (or GroupMax) with the fixed-point initialization.

    Hidden V ~ LogNormal(μ = (n² + (1 − 1/π)n)^{-1/2}, σ² = 1/(4n)) for fan-in n,
    skip W ~ N(0, 1/(4d)), constant bias −√(n/(2πn + 2π − 2)); the first layer
    is LeCun N(0, 1/d) with a shared component of weight ρ across neurons and
    lanes.
    """
    if arch not in (Arch.HYCNN, Arch.GROUPMAX):
        raise ContractViolation(f"init_hycnn builds hycnn or groupmax nets, got {arch.value}")
    if not 0.0 <= first_layer_correlation < 1.0:
        raise ContractViolation(f"first_layer_correlation must lie in [0, 1), got {first_layer_correlation}")
    gate = gate or GateSpec.max()
    net = ConvexNet(arch, input_dim, shape, gate, reparam=reparam)
    d = input_dim
    rho = first_layer_correlation

    first = net.layers[0]
    Ws = _correlated_normal(rng.child(0, "W"), (first.width, d), first.lanes, math.sqrt(1.0 / d), rho)
    bs = _correlated_normal(rng.child(0, "b"), (first.width,), first.lanes, math.sqrt(1.0 / d), rho)
    for k in range(1, first.lanes + 1):
        first.assign(k, W=Ws[k - 1], b=bs[k - 1])

    for index, layer in enumerate(net.layers[1:], start=1):
        n = layer.fan_in
        for k in range(1, layer.lanes + 1):
            V = sample_lognormal(rng.child(index, "V", k), hycnn_weight_mean(n), hycnn_weight_var(n), (layer.width, n))
            W = rng.child(index, "W", k).normal(0.0, math.sqrt(1.0 / (4 * d)), (layer.width, d))
            layer.assign(k, V=V, W=W if layer.skip else None, b=np.full(layer.width, hycnn_bias(n)))

    n = net.out.fan_in
    L = net.depth
    V = sample_lognormal(rng.child(L, "V"), hycnn_weight_mean(n), hycnn_weight_var(n), (1, n))
    W = rng.child(L, "W").normal(0.0, math.sqrt(1.0 / (4 * d)), (1, d))
    net.out.assign(V=V, W=W if net.out.skip else None, b=[hycnn_bias(n)])
    logger.debug(f"Initialized {net!r}")
    return net


def init_icnn_hoedt(
    shape: Sequence[int],
    input_dim: int,
    rng: Rng,
    weight_style: WeightStyle = WeightStyle.LOGNORMAL,
    gate: Optional[GateSpec] = None,
    quadratic: bool = False,
) -> ConvexNet:
    """ICNN / ICNNq whose hidden weights match the principled ICNN moments.

    LogNormal style keeps V ≥ 0 through the softplus reparametrization
    (potentials); Gaussian style leaves V unconstrained (critics).
    """
    gate = gate or GateSpec.relu()
    arch = Arch.ICNNQ if quadratic else Arch.ICNN
    lognormal = weight_style == WeightStyle.LOGNORMAL
    net = ConvexNet(arch, input_dim, shape, gate, reparam=lognormal, nonneg=lognormal)
    d = input_dim

    def hidden_weights(stream: Rng, rows: int, fan_in: int) -> np.ndarray:
        mean, var, _ = hoedt_constants(fan_in)
        if lognormal:
            return sample_lognormal(stream, mean, var, (rows, fan_in))
        return stream.normal(mean, math.sqrt(var), (rows, fan_in))

    for index, layer in enumerate(net.layers):
        fan_in = layer.fan_in if index else d
        _, _, bias = hoedt_constants(fan_in)
        for k in range(1, layer.lanes + 1):
            V = hidden_weights(rng.child(index, "V", k), layer.width, layer.fan_in) if index else None
            W = rng.child(index, "W", k).normal(0.0, math.sqrt(1.0 / d), (layer.width, d))
            layer.assign(k, V=V, W=W, b=np.full(layer.width, bias))

    L = net.depth
    V = hidden_weights(rng.child(L, "V"), 1, net.out.fan_in)
    W = rng.child(L, "W").normal(0.0, math.sqrt(1.0 / d), (1, d))
    net.out.assign(V=V, W=W, b=[0.0])
    if net.Wq is not None:
        with torch.no_grad():
            Wq = rng.child(0, "Wq").normal(0.0, math.sqrt(1.0 / d), tuple(net.Wq.shape))
            net.Wq.copy_(to_tensor(Wq))
    return net


def init_mlp(shape: Sequence[int], input_dim: int, rng: Rng, gate: Optional[GateSpec] = None) -> ConvexNet:
    """Unconstrained MLP with Uniform(±1/√fan_in) weights and biases"""
    gate = gate or GateSpec.relu()
    net = ConvexNet(Arch.MLP, input_dim, shape, gate, reparam=False, nonneg=False)
    for index, layer in enumerate(net.layers):
        fan_in = layer.fan_in if index else input_dim
        bound = 1.0 / math.sqrt(fan_in)
        for k in range(1, layer.lanes + 1):
            stream = rng.child(index, k)
            V = stream.child("V").uniform(-bound, bound, (layer.width, layer.fan_in)) if index else None
            W = stream.child("W").uniform(-bound, bound, (layer.width, input_dim)) if index == 0 else None
            layer.assign(k, V=V, W=W, b=stream.child("b").uniform(-bound, bound, layer.width))
    bound = 1.0 / math.sqrt(net.out.fan_in)
    stream = rng.child(net.depth)
    net.out.assign(V=stream.child("V").uniform(-bound, bound, (1, net.out.fan_in)), b=stream.child("b").uniform(-bound, bound, 1))
    return net


def build_net(
    arch: Arch,
    input_dim: int,
    widths: Sequence[int],
    gate: GateSpec,
    rng: Rng,
    weight_style: WeightStyle = WeightStyle.LOGNORMAL,
) -> ConvexNet:
    """Initializer matching the architecture"""
    if arch in (Arch.HYCNN, Arch.GROUPMAX):
        return init_hycnn(widths, input_dim, rng, gate=gate, arch=arch)
    if arch in (Arch.ICNN, Arch.ICNNQ):
        return init_icnn_hoedt(widths, input_dim, rng, weight_style, gate=gate, quadratic=arch == Arch.ICNNQ)
    if arch == Arch.MLP:
        return init_mlp(widths, input_dim, rng, gate=gate)
    raise ConfigurationError(f"Unknown architecture: {arch}")


def icnn_as_hycnn(net: ConvexNet) -> ConvexNet:
    """The ICNN as a single-gate HyCNN: lane 1 takes the ICNN's parameters verbatim"""
    if net.arch != Arch.ICNN:
        raise ContractViolation(f"expected an ICNN, got {net!r}")
    hycnn = ConvexNet(Arch.HYCNN, net.input_dim, net.widths, net.gate, reparam=net.reparam, nonneg=net.nonneg)
    hycnn.load_state_dict(net.state_dict())
    return hycnn


# ---------------------------------------------------------------- checks


def check_convexity(
    net: torch.nn.Module,
    rng: Rng,
    trials: int = 10_000,
    box: Tuple[float, float] = (-10.0, 10.0),
    input_dim: Optional[int] = None,
) -> ConvexityReport:
    """Random-chord convexity test: f(tx₁ + (1−t)x₂) ≤ t f(x₁) + (1−t) f(x₂)"""
    d = input_dim or net.input_dim
    lo, hi = box
    x1 = rng.child("x1").uniform(lo, hi, (trials, d))
    x2 = rng.child("x2").uniform(lo, hi, (trials, d))
    t = rng.child("t").uniform(0.0, 1.0, (trials, 1))
    f1 = np.atleast_1d(forward(net, x1))
    f2 = np.atleast_1d(forward(net, x2))
    fm = np.atleast_1d(forward(net, t * x1 + (1.0 - t) * x2))
    gap = fm - (t[:, 0] * f1 + (1.0 - t[:, 0]) * f2)
    scale = float(max(1.0, np.abs(f1).max(), np.abs(f2).max()))
    max_violation = float(max(gap.max(), 0.0))
    tolerance = 1e-9 * scale
    report = ConvexityReport(
        trials=trials,
        box=(lo, hi),
        max_violation=max_violation,
        scale=scale,
        tolerance=tolerance,
        passed=max_violation <= tolerance,
    )
    if not report.passed:
        logger.warning(f"Convexity violated: max gap {max_violation:.3e} (scale {scale:.3e})")
    return report


def restrict_to_line(net: ConvexNet, direction: Sequence[float], offset: Optional[Sequence[float]] = None) -> ConvexNet:
    """1-D network t ↦ net(offset + t·direction)"""
    if net.Wq is not None:
        raise ContractViolation("restrict_to_line does not support the quadratic first layer")
    u = np.asarray(direction, dtype=np.float64).reshape(-1, 1)
    o = np.zeros(net.input_dim) if offset is None else np.asarray(offset, dtype=np.float64)
    if u.shape[0] != net.input_dim or o.shape[0] != net.input_dim:
        raise ContractViolation(f"direction and offset must have length {net.input_dim}")
    line = ConvexNet(net.arch, 1, net.widths, net.gate, reparam=False, nonneg=net.nonneg)
    with torch.no_grad():
        for src, dst in zip(net.layers, line.layers):
            for k in range(1, src.lanes + 1):
                W = src.W(k).detach().numpy()
                dst.assign(k, V=src.V(k).detach().numpy(), W=W @ u, b=src.b(k).detach().numpy() + W @ o)
        W = net.out.W.detach().numpy()
        line.out.assign(V=net.out.V_eff.detach().numpy(), W=W @ u, b=net.out.b.detach().numpy() + W @ o)
    return line


# ---------------------------------------------------------------- init statistics


def gaussian_max_moments(sigma: float, rho: float) -> Dict[str, float]:
    """Moments of maxima of equicorrelated centred Gaussians (X, Y, Z, W)"""
    return {
        "mean": sigma * math.sqrt((1.0 - rho) / math.pi),
        "second": sigma**2,
        "cross": (rho + (1.0 - rho) / math.pi) * sigma**2,
    }


def estimate_gaussian_max_moments(rng: Rng, sigma: float, rho: float, n: int = 1_000_000) -> Dict[str, float]:
    """Monte-Carlo version of gaussian_max_moments plus standard errors"""
    common = rng.child("common").normal(size=n)
    own = rng.child("own").normal(size=(4, n))
    X, Y, Z, W = sigma * (math.sqrt(rho) * common + math.sqrt(1.0 - rho) * own)
    first = np.maximum(X, Y)
    second = np.maximum(Z, W)
    samples = {"mean": first, "second": first**2, "cross": first * second}
    out = {}
    for name, values in samples.items():
        out[name] = float(values.mean())
        out[f"{name}_se"] = float(values.std(ddof=1) / math.sqrt(n))
    return out


def init_diagnostics(
    depth: int,
    width: int,
    input_dim: int,
    seeds: Sequence[int],
    batch: int = 64,
    first_layer_correlation: float = 0.5,
) -> List[InitDiagnostics]:
    """Pre-activation moments per hidden layer under standard Gaussian inputs"""
    totals = np.zeros((depth, 4))
    for seed in seeds:
        rng = Rng(seed)
        net = init_hycnn([width] * depth, input_dim, rng.child("net"), first_layer_correlation=first_layer_correlation)
        x = to_tensor(rng.child("inputs").normal(size=(batch, input_dim)))
        trace = ForwardTrace(x=x)
        with torch.no_grad():
            net.run(x, trace)
        for index, ((s, t), z) in enumerate(zip(trace.preacts, trace.hidden)):
            totals[index] += [
                float(0.5 * (s**2 + t**2).mean()),
                float((s * t).mean()),
                float(0.5 * (s + t).mean()),
                float(z.norm(dim=-1).mean()),
            ]
    totals /= len(seeds)
    return [
        InitDiagnostics(layer=i + 1, second_moment=row[0], cross_moment=row[1], mean=row[2], hidden_norm=row[3])
        for i, row in enumerate(totals)
    ]


# ---------------------------------------------------------------- documents


def _lane_block(layer, k: int) -> Dict[str, list]:
    return {
        f"V{k}": layer.V(k).detach().numpy().tolist(),
        f"W{k}": layer.W(k).detach().numpy().tolist(),
        f"b{k}": layer.b(k).detach().numpy().tolist(),
    }


def to_document(net: ConvexNet, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """JSON-ready description with effective weights (and raw pre-images when reparametrized)"""
    layers = []
    for layer in net.layers:
        block: Dict[str, list] = {}
        for k in range(1, layer.lanes + 1):
            block.update(_lane_block(layer, k))
        layers.append(block)
    doc: Dict[str, Any] = {
        "arch": net.arch.value,
        "gate": net.gate.model_dump(mode="json"),
        "input_dim": net.input_dim,
        "dims": net.widths,
        "reparam": net.reparam,
        "nonneg": net.nonneg,
        "layers": layers,
        "out": {
            "V": net.out.V_eff.detach().numpy().tolist(),
            "W": net.out.W.detach().numpy().tolist(),
            "b": net.out.b.detach().numpy().tolist(),
        },
    }
    if net.Wq is not None:
        doc["Wq"] = net.Wq.detach().numpy().tolist()
    if net.reparam:
        doc["raw"] = {
            "layers": [
                {f"V{k}": getattr(layer, f"V{k}_raw").detach().numpy().tolist() for k in range(1, layer.lanes + 1)}
                for layer in net.layers
            ],
            "out": {"V": net.out.V_raw.detach().numpy().tolist()},
        }
    if metadata:
        doc["metadata"] = metadata
    return doc


def _matrix(rows: list, cols: int) -> np.ndarray:
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), cols)


def from_document(doc: Dict[str, Any]) -> ConvexNet:
    try:
        arch = Arch(doc["arch"])
        gate = GateSpec(**doc["gate"])
        net = ConvexNet(arch, int(doc["input_dim"]), doc["dims"], gate, reparam=bool(doc["reparam"]), nonneg=bool(doc["nonneg"]))
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"Invalid network document: {e}")
    d = net.input_dim
    for layer, block in zip(net.layers, doc["layers"]):
        for k in range(1, layer.lanes + 1):
            layer.assign(
                k,
                V=_matrix(block[f"V{k}"], layer.fan_in),
                W=_matrix(block[f"W{k}"], d),
                b=np.asarray(block[f"b{k}"], dtype=np.float64),
            )
    out = doc["out"]
    net.out.assign(V=_matrix(out["V"], net.out.fan_in), W=_matrix(out["W"], d), b=np.asarray(out["b"], dtype=np.float64))
    with torch.no_grad():
        if net.Wq is not None:
            net.Wq.copy_(to_tensor(_matrix(doc["Wq"], d)))
        raw = doc.get("raw")
        if net.reparam and raw:
            for layer, block in zip(net.layers, raw["layers"]):
                for k in range(1, layer.lanes + 1):
                    getattr(layer, f"V{k}_raw").copy_(to_tensor(_matrix(block[f"V{k}"], layer.fan_in)))
            net.out.V_raw.copy_(to_tensor(_matrix(raw["out"]["V"], net.out.fan_in)))
    return net


def save_net(net: ConvexNet, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_document(net, metadata)))
    logger.debug(f"Saved network to {path}")
    return path


def load_net(path: Union[str, Path]) -> ConvexNet:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read network document {path}: {e}")
    return from_document(doc)
