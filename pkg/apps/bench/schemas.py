from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from apps.convex_nets.schemas import Arch, GateSpec, WeightStyle
from apps.ot_learn.schemas import OTConfig
from apps.training.schemas import TrainConfig

REGRESSION_IDS = ("f1", "f2", "f3", "f4", "f5", "f6")
OT_IDS = ("phi1", "phi2", "phi3", "phi4")
SHAPE_IDS = ("checkerboard", "halfmoon", "moons-rotated", "gauss-ring")
GENERATOR_IDS = REGRESSION_IDS + OT_IDS + SHAPE_IDS


class Task(str, Enum):
    REGRESSION = "regression"
    OT = "ot"
    INIT_DIAGNOSTICS = "init-diagnostics"
    CONSTRUCT = "construct"
    PIECES = "pieces"
    EMBED = "embed"


class GeneratorSpec(BaseModel):
    id: str
    d: int = Field(2, ge=1)
    sigma: float = Field(0.0, ge=0, description="noise level of f-generators; 0 is noiseless")
    mu_seed: int = Field(0, ge=0, description="seed of the μ vector of f6")

    @property
    def family(self) -> Optional[str]:
        if self.id in REGRESSION_IDS:
            return "regression"
        if self.id in OT_IDS:
            return "ot"
        if self.id in SHAPE_IDS:
            return "shape"
        return None


class ModelSpec(BaseModel):
    arch: Arch = Arch.HYCNN
    width: int = Field(48, ge=1)
    depth: int = Field(4, ge=1)
    gate: GateSpec = GateSpec.max()
    weight_style: WeightStyle = WeightStyle.LOGNORMAL

    @property
    def widths(self) -> List[int]:
        return [self.width] * self.depth


class ConstructSpec(BaseModel):
    target: Literal["quadratic", "quadratic2", "monomial", "multiquad"]
    widths: Optional[List[int]] = None
    L: int = Field(2, ge=1)
    n: int = Field(2, ge=2)
    m: int = Field(3, ge=3)
    d: int = Field(2, ge=1)
    positive: bool = False


class ExperimentConfig(BaseModel):
    """One run: a task, its data, the model and the seeds to repeat it over"""

    name: str = "run"
    task: Task
    method: Optional[str] = Field(None, description="label in comparison tables; defaults to the architecture")
    generator: Optional[str] = None
    d: int = Field(2, ge=1)
    n: int = Field(1000, ge=1)
    m: Optional[int] = Field(None, ge=1)
    n_test: int = Field(1000, ge=1)
    n_val: int = Field(1000, ge=1)
    sigma: float = Field(0.0, ge=0)
    model: ModelSpec = ModelSpec()
    critic: Optional[ModelSpec] = None
    train: TrainConfig = TrainConfig()
    ot: OTConfig = OTConfig()
    estimator: Literal["neural", "entropic"] = "neural"
    entropic_eps: float = Field(1.0, gt=0)
    select_k: int = Field(0, ge=0, description="average the test metric over the K best checkpoints; 0 uses the final nets")
    construct: Optional[ConstructSpec] = None
    seeds: List[int] = Field([0], min_length=1)
    output: Optional[str] = None

    @model_validator(mode="after")
    def check_references(self) -> "ExperimentConfig":
        if self.task in (Task.REGRESSION, Task.OT):
            if self.generator is None:
                raise ValueError(f"task {self.task.value} needs a generator")
            allowed = REGRESSION_IDS if self.task == Task.REGRESSION else OT_IDS + SHAPE_IDS
            if self.generator not in allowed:
                raise ValueError(f"unknown generator {self.generator!r} for task {self.task.value}")
        if self.task == Task.CONSTRUCT and self.construct is None:
            raise ValueError("task construct needs a construct block")
        if any(seed < 0 for seed in self.seeds):
            raise ValueError("seeds must be non-negative")
        return self

    @property
    def label(self) -> str:
        if self.method:
            return self.method
        if self.task == Task.OT and self.estimator == "entropic":
            return f"entropic(eps={self.entropic_eps})"
        return self.model.arch.value

    def generator_spec(self, seed: int = 0) -> GeneratorSpec:
        return GeneratorSpec(id=self.generator, d=self.d, sigma=self.sigma, mu_seed=seed)


class MetricSummary(BaseModel):
    mean: Optional[float] = None
    se: Optional[float] = Field(None, description="sample standard deviation / √n")
    n: int = 0


class RunSummary(BaseModel):
    name: str
    task: Task
    method: str
    generator: Optional[str] = None
    d: int
    width: int
    depth: int
    seeds: List[int]
    metrics: Dict[str, MetricSummary] = {}
    diverged: bool = False
    diverged_seeds: List[int] = []
    passed: Optional[bool] = None
