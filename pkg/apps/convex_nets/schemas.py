from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class GateKind(str, Enum):
    MAX = "max"
    LOGSUMEXP = "logsumexp"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    SOFTPLUS = "softplus"


class Arch(str, Enum):
    HYCNN = "hycnn"
    ICNN = "icnn"
    ICNNQ = "icnnq"
    GROUPMAX = "groupmax"
    MLP = "mlp"


class WeightStyle(str, Enum):
    LOGNORMAL = "lognormal"
    GAUSSIAN = "gaussian"


class GateSpec(BaseModel):
    kind: GateKind
    tau: Optional[float] = Field(None, gt=0)
    alpha: Optional[float] = Field(None, gt=0, lt=1)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_parameters(self) -> "GateSpec":
        if self.kind in (GateKind.LOGSUMEXP, GateKind.SOFTPLUS) and self.tau is None:
            raise ValueError(f"{self.kind.value} gate requires tau > 0")
        if self.kind == GateKind.LEAKY_RELU and self.alpha is None:
            raise ValueError("leaky_relu gate requires alpha in (0, 1)")
        return self

    @classmethod
    def max(cls) -> "GateSpec":
        return cls(kind=GateKind.MAX)

    @classmethod
    def logsumexp(cls, tau: float) -> "GateSpec":
        return cls(kind=GateKind.LOGSUMEXP, tau=tau)

    @classmethod
    def relu(cls) -> "GateSpec":
        return cls(kind=GateKind.RELU)

    @classmethod
    def leaky_relu(cls, alpha: float = 0.2) -> "GateSpec":
        return cls(kind=GateKind.LEAKY_RELU, alpha=alpha)

    @classmethod
    def softplus(cls, tau: float = 1.0) -> "GateSpec":
        return cls(kind=GateKind.SOFTPLUS, tau=tau)

    @classmethod
    def from_name(cls, name: str, tau: Optional[float] = None, alpha: Optional[float] = None) -> "GateSpec":
        """Gate from a CLI name; smooth gates default to tau = 1, leaky_relu to alpha = 0.2"""
        kind = GateKind(name)
        if kind in (GateKind.LOGSUMEXP, GateKind.SOFTPLUS):
            return cls(kind=kind, tau=1.0 if tau is None else tau)
        if kind == GateKind.LEAKY_RELU:
            return cls(kind=kind, alpha=0.2 if alpha is None else alpha)
        return cls(kind=kind)

    @property
    def single_lane(self) -> bool:
        return self.kind in (GateKind.RELU, GateKind.LEAKY_RELU, GateKind.SOFTPLUS)

    @property
    def smooth(self) -> bool:
        return self.kind in (GateKind.LOGSUMEXP, GateKind.SOFTPLUS)

    @property
    def piecewise_affine(self) -> bool:
        return not self.smooth

    @property
    def lanes(self) -> int:
        return 1 if self.single_lane else 2

    def with_tau(self, tau: float) -> "GateSpec":
        if not self.smooth:
            return self
        return self.model_copy(update={"tau": float(tau)})


class ConvexityReport(BaseModel):
    trials: int
    box: Tuple[float, float]
    max_violation: float
    scale: float
    tolerance: float
    passed: bool


class InitDiagnostics(BaseModel):
    """Per-hidden-layer pre-activation statistics averaged over seeds"""

    layer: int
    second_moment: float = Field(..., description="E[s²] over lanes, neurons, inputs and seeds")
    cross_moment: float = Field(..., description="E[s·t] between the two lanes of a neuron")
    mean: float
    hidden_norm: float = Field(..., description="mean ℓ₂-norm of the hidden state z")
