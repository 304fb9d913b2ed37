import math
from typing import Literal, Optional, Union

from pydantic import BaseModel, Field
from typing_extensions import Annotated


class ConstantSchedule(BaseModel):
    kind: Literal["constant"] = "constant"
    v: float = Field(..., gt=0)

    model_config = {"frozen": True}

    def at(self, t: float) -> float:
        return self.v


class CosineSchedule(BaseModel):
    """λ_t = λ_min + ½(λ₀ − λ_min)(1 + cos(πt/T)), λ_min = final_ratio·λ₀"""

    kind: Literal["cosine"] = "cosine"
    v0: float = Field(..., gt=0)
    final_ratio: float = Field(0.01, gt=0, le=1)
    T: int = Field(..., ge=1)

    model_config = {"frozen": True}

    def at(self, t: float) -> float:
        t = min(max(t, 0), self.T)
        v_min = self.v0 * self.final_ratio
        return v_min + 0.5 * (self.v0 - v_min) * (1.0 + math.cos(math.pi * t / self.T))


class CyclicCosineSchedule(BaseModel):
    """Cosine decay restarted every cycle_len steps from a geometrically shrinking start.

    Inside a cycle the value falls from its start to floor_ratio·start by
    floor_at_fraction of the cycle and stays there.
    """

    kind: Literal["cyclic_cosine"] = "cyclic_cosine"
    v0: float = Field(..., gt=0)
    cycle_len: int = Field(..., ge=1)
    decay_per_cycle: float = Field(0.8, gt=0, le=1)
    floor_ratio: float = Field(0.1, gt=0, le=1)
    floor_at_fraction: float = Field(0.7, gt=0, le=1)
    T: int = Field(..., ge=1)

    model_config = {"frozen": True}

    def at(self, t: float) -> float:
        t = min(max(t, 0), self.T)
        last_cycle = math.ceil(self.T / self.cycle_len) - 1
        cycle = min(int(t // self.cycle_len), last_cycle)
        start = self.v0 * self.decay_per_cycle**cycle
        floor = start * self.floor_ratio
        u = (t - cycle * self.cycle_len) / self.cycle_len
        if u >= self.floor_at_fraction:
            return floor
        return floor + 0.5 * (start - floor) * (1.0 + math.cos(math.pi * u / self.floor_at_fraction))


Schedule = Annotated[
    Union[ConstantSchedule, CosineSchedule, CyclicCosineSchedule],
    Field(discriminator="kind"),
]


class AdamParams(BaseModel):
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class TrainConfig(BaseModel):
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(1000, ge=1)
    lr: Schedule = ConstantSchedule(v=1e-2)
    tau: Optional[Schedule] = None
    adam: AdamParams = AdamParams()
    seed: int = Field(0, ge=0)
    standardize: bool = True
    divergence_threshold: float = Field(1e12, gt=0)


class EpochRecord(BaseModel):
    epoch: int
    train_mse: float
    lr: float
    tau: Optional[float] = None
