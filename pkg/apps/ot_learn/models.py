from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
import torch
from torch import nn

from apps.ot_learn.schemas import OTTraceRow
from core.exceptions import ContractViolation
from core.tensor import TORCH_DTYPE, Matrix, Vector, as_matrix


class CloudRole(str, Enum):
    SOURCE = "source"
    TARGET = "target"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class PointCloud:
    """Empirical measure with uniform weights on the rows of X"""

    X: Matrix
    role: CloudRole = CloudRole.SOURCE

    def __post_init__(self):
        X = as_matrix(self.X, name=f"{self.role.value} cloud")
        if X.shape[0] < 1:
            raise ContractViolation(f"{self.role.value} cloud is empty")
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def weights(self) -> Vector:
        return np.full(self.n, 1.0 / self.n)


@dataclass
class SinkhornResult:
    value: float
    f: Vector
    g: Vector
    iterations: int
    converged: bool


class QuadraticPotential(nn.Module):
    """Analytic potential ½·scale·‖x‖², whose gradient map is x ↦ scale·x.

    Holds no trainable parameters, so a saddle trainer keeps it frozen.
    """

    def __init__(self, input_dim: int, scale: float = 1.0):
        super().__init__()
        if input_dim < 1:
            raise ContractViolation(f"input_dim must be positive, got {input_dim}")
        self.input_dim = input_dim
        self.scale = float(scale)

    def __repr__(self) -> str:
        return f"QuadraticPotential(input_dim={self.input_dim}, scale={self.scale})"

    def set_tau(self, tau: float) -> None:
        pass

    def clone(self) -> "QuadraticPotential":
        return QuadraticPotential(self.input_dim, self.scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_dim:
            raise ContractViolation(f"expected inputs of dimension {self.input_dim}, got {x.shape[-1]}")
        return 0.5 * self.scale * (x.to(TORCH_DTYPE) ** 2).sum(dim=-1)


@dataclass
class Checkpoint:
    """Snapshot of potential and critic after an outer iteration"""

    outer_iter: int
    f: nn.Module
    g: nn.Module
    val_sinkhorn: Optional[float] = None


@dataclass
class OTResult:
    f: nn.Module
    g: nn.Module
    trace: List[OTTraceRow] = field(default_factory=list)
    checkpoints: List[Checkpoint] = field(default_factory=list)
