from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class CertificateMethod(str, Enum):
    EXACT = "exact"
    GRID = "grid"


class ConstructionCertificate(BaseModel):
    target: str = Field(..., description="x^2, x^n or ||x||^2")
    widths: List[int]
    claimed_bound: float
    measured: float
    method: CertificateMethod
    points: Optional[int] = Field(None, description="evaluation points for grid certificates")
    passed: bool = Field(..., serialization_alias="pass")
    details: Dict[str, float] = {}


class LowerBoundReport(BaseModel):
    k: int
    resolution: int
    candidates: int = Field(0, description="grid partitions searched")
    value: float
    floor: float = Field(..., description="1/(8k²)")
    breakpoints: List[float]
    witness_error: float


class EmbeddingReport(BaseModel):
    samples: int
    icnn_single_gate_max_delta: float = Field(..., description="ICNN vs the same parameters in a single-gate HyCNN; exactly 0")
    icnn_relu_max_delta: float
    icnn_leaky_max_delta: float
    relu_network_width: int
    hycnn_to_relu_max_delta: float
    witness_error: float
    witness_beats_piece_budget: int = Field(..., description="largest ICNN piece budget whose sup-error floor exceeds the witness error")
    passed: bool


class DiagonalFloorReport(BaseModel):
    input_dim: int
    piece_bound: int
    measured: float
    floor: float
    passed: bool


class PieceCountReport(BaseModel):
    seed: int
    widths: List[int] = []
    gate: str = "relu"
    pieces: int
    kinks: int
    kink_bound: int = Field(..., description="d₁ + 2Σ_{ℓ≥2} d_ℓ")
    piece_bound: int
    sup_error: float = Field(..., description="exact sup |f − x²| on [0, 1]")
    floor: float
    passed: bool
