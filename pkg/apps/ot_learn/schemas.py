from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from apps.training.schemas import CosineSchedule, Schedule


class OTConfig(BaseModel):
    outer_T: int = Field(1000, ge=0, description="outer iterations (potential updates)")
    inner_S: int = Field(5, ge=1, description="critic updates per outer iteration")
    batch_M: int = Field(256, ge=1)
    lr: Optional[Schedule] = Field(None, description="defaults to cosine decay from 1e-2 to 1e-4 over outer_T")
    tau: Optional[Schedule] = None
    adam_betas: Tuple[float, float] = (0.5, 0.9)
    adam_eps: float = Field(1e-8, gt=0)
    lambda_cvx: float = Field(1.0, ge=0, description="critic penalty weight, ICNN baselines only")
    seed: int = Field(0, ge=0)
    checkpoint_every: int = Field(0, ge=0, description="0 disables checkpoints")
    eval_every: int = Field(0, ge=0, description="0 disables validation Sinkhorn")
    val_eps: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def default_lr(self) -> "OTConfig":
        if self.lr is None:
            self.lr = CosineSchedule(v0=1e-2, final_ratio=0.01, T=max(self.outer_T, 1))
        return self


class OTTraceRow(BaseModel):
    outer_iter: int
    objective: float = Field(..., description="mean of f(X) + <Y, grad g(Y)> - f(grad g(Y)) on the last batches")
    tau: Optional[float] = None
    lr: float
    val_sinkhorn: Optional[float] = None


class SelectionReport(BaseModel):
    indices: List[int] = Field(..., description="checkpoint positions, best first")
    outer_iters: List[int]
    val_scores: List[float]
    test_metric: float = Field(..., description="mean test Sinkhorn divergence over the selected checkpoints")


class SinkhornReport(BaseModel):
    eps: float
    value: float
    divergence: float
    iterations: int
    converged: bool
