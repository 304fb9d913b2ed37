import copy
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from apps.convex_nets.schemas import Arch, GateKind, GateSpec
from core.exceptions import ContractViolation
from core.tensor import TORCH_DTYPE, logsumexp2_t, softplus_inverse, softplus_t


def _zeros(*shape: int) -> torch.Tensor:
    return torch.zeros(*shape, dtype=TORCH_DTYPE)


def apply_gate(gate: GateSpec, a1: torch.Tensor, a2: Optional[torch.Tensor]) -> torch.Tensor:
    """σ̄(a1, a2); single-lane gates ignore a2"""
    if gate.kind == GateKind.MAX:
        # ties route to lane 1
        return torch.where(a1 >= a2, a1, a2)
    if gate.kind == GateKind.LOGSUMEXP:
        return logsumexp2_t(a1, a2, gate.tau)
    if gate.kind == GateKind.RELU:
        return torch.relu(a1)
    if gate.kind == GateKind.LEAKY_RELU:
        return torch.where(a1 >= 0, a1, gate.alpha * a1)
    return gate.tau * softplus_t(a1 / gate.tau)


def gate_weights(gate: GateSpec, a1: torch.Tensor, a2: Optional[torch.Tensor]) -> torch.Tensor:
    """∂σ̄/∂a1 per neuron: the max selection, the log-sum-exp weight or the activation slope"""
    if gate.kind == GateKind.MAX:
        return (a1 >= a2).to(TORCH_DTYPE)
    if gate.kind == GateKind.LOGSUMEXP:
        return torch.sigmoid((a1 - a2) / gate.tau)
    if gate.kind == GateKind.RELU:
        return (a1 > 0).to(TORCH_DTYPE)
    if gate.kind == GateKind.LEAKY_RELU:
        return torch.where(a1 >= 0, torch.ones_like(a1), torch.full_like(a1, gate.alpha))
    return torch.sigmoid(a1 / gate.tau)


class _AffineBlock(nn.Module):
    """Shared plumbing for hidden and output layers: V (constrained), W (skip), b"""

    def __init__(self, reparam: bool, nonneg: bool, skip: bool):
        super().__init__()
        self.nonneg = nonneg
        self.reparam = reparam and nonneg
        self.skip = skip

    def _add_lane(self, suffix: str, rows: int, fan_in: int, input_dim: int) -> None:
        self.register_parameter(f"V{suffix}_raw", nn.Parameter(_zeros(rows, fan_in)))
        if self.skip:
            self.register_parameter(f"W{suffix}", nn.Parameter(_zeros(rows, input_dim)))
        else:
            self.register_buffer(f"W{suffix}", _zeros(rows, input_dim))
        self.register_parameter(f"b{suffix}", nn.Parameter(_zeros(rows)))

    def _effective(self, suffix: str) -> torch.Tensor:
        raw = getattr(self, f"V{suffix}_raw")
        if self.reparam:
            return softplus_t(raw)
        if self.nonneg and raw.numel() and bool((raw < 0).any()):
            raise ContractViolation(f"hidden weight V{suffix} has negative entries on a convex network")
        return raw

    def _assign(self, suffix: str, V=None, W=None, b=None) -> None:
        with torch.no_grad():
            if V is not None:
                V = np.asarray(V, dtype=np.float64)
                if self.reparam:
                    raw = softplus_inverse(V) if V.size else V
                else:
                    if self.nonneg and V.size and np.any(V < 0):
                        raise ContractViolation(f"V{suffix} must be non-negative")
                    raw = V
                getattr(self, f"V{suffix}_raw").copy_(torch.as_tensor(np.asarray(raw), dtype=TORCH_DTYPE))
            if W is not None:
                W = np.asarray(W, dtype=np.float64)
                if not self.skip and np.any(W != 0):
                    raise ContractViolation(f"layer has no skip connection, W{suffix} must stay zero")
                getattr(self, f"W{suffix}").copy_(torch.as_tensor(W, dtype=TORCH_DTYPE))
            if b is not None:
                getattr(self, f"b{suffix}").copy_(torch.as_tensor(np.asarray(b, dtype=np.float64), dtype=TORCH_DTYPE))

    def _lane(self, suffix: str, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        a = x @ getattr(self, f"W{suffix}").T + getattr(self, f"b{suffix}")
        if z.shape[-1]:
            a = a + z @ self._effective(suffix).T
        return a


class HyLayer(_AffineBlock):
    def __init__(
        self,
        fan_in: int,
        width: int,
        input_dim: int,
        lanes: int = 2,
        reparam: bool = True,
        nonneg: bool = True,
        skip: bool = True,
    ):
        super().__init__(reparam, nonneg, skip)
        self.fan_in = fan_in
        self.width = width
        self.lanes = lanes
        for k in range(1, lanes + 1):
            self._add_lane(str(k), width, fan_in, input_dim)

    def V(self, k: int) -> torch.Tensor:
        return self._effective(str(k))

    def W(self, k: int) -> torch.Tensor:
        return getattr(self, f"W{k}")

    def b(self, k: int) -> torch.Tensor:
        return getattr(self, f"b{k}")

    def assign(self, k: int, V=None, W=None, b=None) -> None:
        if k > self.lanes:
            raise ContractViolation(f"lane {k} does not exist on a {self.lanes}-lane layer")
        self._assign(str(k), V, W, b)

    def preactivations(self, z: torch.Tensor, x: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        a1 = self._lane("1", z, x)
        a2 = self._lane("2", z, x) if self.lanes == 2 else None
        return a1, a2


class OutLayer(_AffineBlock):
    def __init__(self, fan_in: int, input_dim: int, reparam: bool = True, nonneg: bool = True, skip: bool = True):
        super().__init__(reparam, nonneg, skip)
        self.fan_in = fan_in
        self._add_lane("", 1, fan_in, input_dim)

    @property
    def V_eff(self) -> torch.Tensor:
        return self._effective("")

    def assign(self, V=None, W=None, b=None) -> None:
        self._assign("", V, W, b)

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        return self._lane("", z, x).squeeze(-1)


@dataclass
class ForwardTrace:
    """Intermediate quantities of one batched forward pass"""

    x: torch.Tensor
    preacts: List[Tuple[torch.Tensor, Optional[torch.Tensor]]] = field(default_factory=list)
    selections: List[torch.Tensor] = field(default_factory=list)
    hidden: List[torch.Tensor] = field(default_factory=list)
    output: Optional[torch.Tensor] = None


class ConvexNet(nn.Module):
    """Layered HyCNN / ICNN / ICNNq / GroupMax / MLP container.

    z₀ is empty, z_{ℓ+1} = σ̄(V¹z + W¹x + b¹, V²z + W²x + b²) and the output is
    V_L z_L + W_L x + b_L. Hidden weights are stored raw; with ``reparam`` the
    effective weight is softplus(raw), otherwise raw must stay ≥ 0 when
    ``nonneg`` holds.
    """

    def __init__(
        self,
        arch: Arch,
        input_dim: int,
        widths: Sequence[int],
        gate: GateSpec,
        reparam: bool = True,
        nonneg: Optional[bool] = None,
    ):
        super().__init__()
        widths = [int(w) for w in widths]
        if not widths or min(widths) < 1:
            raise ContractViolation(f"shape must be a non-empty list of positive widths, got {widths}")
        if input_dim < 1:
            raise ContractViolation(f"input_dim must be positive, got {input_dim}")
        if arch in (Arch.ICNN, Arch.ICNNQ) and not gate.single_lane:
            raise ContractViolation(f"{arch.value} uses a single-lane gate, got {gate.kind.value}")

        self.arch = arch
        self.input_dim = input_dim
        self.gate = gate
        self.nonneg = (arch != Arch.MLP) if nonneg is None else nonneg
        self.reparam = reparam and self.nonneg

        # GroupMax and MLP only see the input in the first layer
        deep_skip = arch not in (Arch.GROUPMAX, Arch.MLP)
        layers = []
        fan_in = 0
        for index, width in enumerate(widths):
            layers.append(
                HyLayer(
                    fan_in,
                    width,
                    input_dim,
                    lanes=gate.lanes,
                    reparam=self.reparam,
                    nonneg=self.nonneg,
                    skip=index == 0 or deep_skip,
                )
            )
            fan_in = width
        self.layers = nn.ModuleList(layers)
        self.out = OutLayer(fan_in, input_dim, reparam=self.reparam, nonneg=self.nonneg, skip=deep_skip)
        if arch == Arch.ICNNQ:
            self.Wq = nn.Parameter(_zeros(widths[0], input_dim))
        else:
            self.Wq = None

    def __repr__(self) -> str:
        return (
            f"ConvexNet(arch={self.arch.value}, input_dim={self.input_dim}, widths={self.widths}, "
            f"gate={self.gate.kind.value}, reparam={self.reparam}, nonneg={self.nonneg})"
        )

    @property
    def widths(self) -> List[int]:
        return [layer.width for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def set_tau(self, tau: float) -> None:
        self.gate = self.gate.with_tau(tau)

    def parameter_version(self) -> Tuple[int, ...]:
        return tuple(p._version for p in self.parameters())

    def clone(self) -> "ConvexNet":
        return copy.deepcopy(self)

    def hidden_weights(self) -> List[torch.Tensor]:
        """Effective hidden-to-hidden and hidden-to-output matrices"""
        mats = []
        for layer in self.layers[1:]:
            mats.extend(layer.V(k) for k in range(1, layer.lanes + 1))
        mats.append(self.out.V_eff)
        return mats

    def run(self, x: torch.Tensor, trace: Optional[ForwardTrace] = None) -> torch.Tensor:
        if x.shape[-1] != self.input_dim:
            raise ContractViolation(f"expected inputs of dimension {self.input_dim}, got {x.shape[-1]}")
        z = x.new_zeros(x.shape[:-1] + (0,))
        for index, layer in enumerate(self.layers):
            a1, a2 = layer.preactivations(z, x)
            if index == 0 and self.Wq is not None:
                quad = (x @ self.Wq.T) ** 2
                a1 = a1 + quad
                a2 = a2 + quad if a2 is not None else None
            z = apply_gate(self.gate, a1, a2)
            if trace is not None:
                trace.preacts.append((a1, a2))
                trace.selections.append(gate_weights(self.gate, a1, a2))
                trace.hidden.append(z)
        out = self.out(z, x)
        if trace is not None:
            trace.output = out
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 1:
            return self.run(x.unsqueeze(0)).squeeze(0)
        return self.run(x)
