from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np
import torch

from apps.convex_nets.models import ConvexNet, ForwardTrace, apply_gate
from apps.convex_nets.services import forward, input_gradient, to_tensor
from apps.training.schemas import EpochRecord
from core.exceptions import ContractViolation


@dataclass
class GradTape:
    """Forward pass kept alive for reverse-mode differentiation.

    The tape remembers the parameter versions it was recorded against;
    any in-place update of the network afterwards makes it stale.
    """

    net: ConvexNet
    trace: ForwardTrace
    version: Tuple[int, ...]

    @classmethod
    def record(cls, net: ConvexNet, x) -> "GradTape":
        xt = to_tensor(x)
        if xt.dim() == 1:
            xt = xt.unsqueeze(0)
        trace = ForwardTrace(x=xt)
        net.run(xt, trace)
        return cls(net=net, trace=trace, version=net.parameter_version())

    @property
    def output(self) -> torch.Tensor:
        return self.trace.output

    @property
    def value(self) -> Union[float, np.ndarray]:
        out = self.output.detach()
        return float(out[0]) if out.numel() == 1 else out.numpy()

    def is_stale(self) -> bool:
        return self.net.parameter_version() != self.version

    def replay(self) -> torch.Tensor:
        """Recompute the output from the stored last-layer pre-activations"""
        if not self.trace.preacts:
            raise ContractViolation("tape holds no hidden layers")
        a1, a2 = self.trace.preacts[-1]
        z = apply_gate(self.net.gate, a1, a2)
        return self.net.out(z, self.trace.x)


class AdamState:
    """Per-parameter first/second moment buffers and the step counter"""

    def __init__(
        self,
        params: Dict[str, torch.nn.Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not params:
            raise ContractViolation("AdamState needs at least one parameter")
        self.params = dict(params)
        self.optimizer = torch.optim.Adam(list(self.params.values()), lr=1e-3, betas=(beta1, beta2), eps=eps)

    @property
    def step(self) -> int:
        first = next(iter(self.params.values()))
        state = self.optimizer.state.get(first, {})
        return int(state["step"]) if "step" in state else 0

    def moments(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        param = self.params[name]
        state = self.optimizer.state.get(param, {})
        if "exp_avg" not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state["exp_avg"], state["exp_avg_sq"]


class StandardizedPredictor:
    """Network wrapped with the per-coordinate input standardization it was trained on"""

    def __init__(self, net: ConvexNet, mean: np.ndarray, std: np.ndarray):
        self.net = net
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def __call__(self, X) -> Union[float, np.ndarray]:
        return forward(self.net, self.transform(X))

    def gradient(self, X) -> np.ndarray:
        return input_gradient(self.net, self.transform(X)) / self.std


@dataclass
class RegressionResult:
    predictor: StandardizedPredictor
    trace: List[EpochRecord]
