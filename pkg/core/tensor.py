"""Dense float64 kernels and the seeded random source shared by every app.

Matrices and vectors are plain ``numpy`` float64 arrays; helpers here check
shapes and hand out read-only copies. Network code runs in ``torch`` float64
and uses the ``*_t`` twins of the scalar kernels.
"""
import hashlib
import logging
from typing import Sequence, Tuple, Union

import numpy as np
import torch
from numpy.typing import ArrayLike, NDArray

from core.exceptions import ContractViolation

logger = logging.getLogger(__name__)

DTYPE = np.float64
TORCH_DTYPE = torch.float64

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]
Scalar = Union[float, NDArray[np.float64]]


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=DTYPE, copy=True)
    out.setflags(write=False)
    return out


def as_matrix(data: ArrayLike, name: str = "matrix", allow_nonfinite: bool = False) -> Matrix:
    """Validate and return a read-only row-major float64 matrix"""
    array = np.asarray(data, dtype=DTYPE)
    if array.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {array.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(array)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return _frozen(np.ascontiguousarray(array))


def as_vector(data: ArrayLike, name: str = "vector", allow_nonfinite: bool = False) -> Vector:
    """Validate and return a read-only float64 vector"""
    array = np.asarray(data, dtype=DTYPE)
    if array.ndim != 1:
        raise ContractViolation(f"{name} must be 1-D, got shape {array.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(array)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return _frozen(array)


def matvec(M: ArrayLike, v: ArrayLike) -> Vector:
    M = np.asarray(M, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if M.ndim != 2 or v.ndim != 1:
        raise ContractViolation(f"matvec expects a matrix and a vector, got {M.shape} and {v.shape}")
    if M.shape[1] != v.shape[0]:
        raise ContractViolation(f"matvec dimension mismatch: {M.shape} · ({v.shape[0]},)")
    return _frozen(M @ v)


def _scalar_or_array(value: np.ndarray) -> Scalar:
    return float(value) if np.ndim(value) == 0 else value


def logsumexp2(a: ArrayLike, b: ArrayLike, tau: float) -> Scalar:
    """τ·log(e^{a/τ} + e^{b/τ}), shifted by max(a, b)"""
    if not tau > 0:
        raise ContractViolation(f"logsumexp2 needs tau > 0, got {tau}")
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    high = np.maximum(a, b)
    gap = np.abs(a - b)
    return _scalar_or_array(high + tau * np.log1p(np.exp(-gap / tau)))


def softplus(x: ArrayLike) -> Scalar:
    x = np.asarray(x, dtype=DTYPE)
    return _scalar_or_array(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))


def softplus_inverse(y: ArrayLike) -> Scalar:
    """log(e^y − 1) written as y + log(1 − e^{−y})"""
    y = np.asarray(y, dtype=DTYPE)
    if np.any(~(y > 0)):
        raise ContractViolation("softplus_inverse is only defined for y > 0")
    return _scalar_or_array(y + np.log(-np.expm1(-y)))


def softplus_t(x: torch.Tensor) -> torch.Tensor:
    return torch.logaddexp(x, torch.zeros_like(x))


def logsumexp2_t(a: torch.Tensor, b: torch.Tensor, tau: float) -> torch.Tensor:
    return tau * torch.logaddexp(a / tau, b / tau)


def lognormal_parameters(mean: float, var: float) -> Tuple[float, float]:
    """Location and squared scale of the Normal whose exponential has the given moments"""
    if not (mean > 0 and var > 0):
        raise ContractViolation(f"log-normal moments must be positive, got mean={mean}, var={var}")
    total = mean**2 + var
    return float(np.log(mean**2 / np.sqrt(total))), float(np.log(total / mean**2))


def _role_key(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode(), digest_size=4).digest(), "little")
    if part < 0:
        raise ContractViolation(f"stream key parts must be non-negative, got {part}")
    return int(part)


class Rng:
    """Counter-based (Philox) generator addressed by a seed and a key path.

    ``Rng(7).child(3, "W1")`` always yields the same stream, no matter which
    other children were drawn from before it.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0:
            raise ContractViolation(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"

    def child(self, *parts: Union[int, str]) -> "Rng":
        return Rng(self.seed, self.key + tuple(_role_key(p) for p in parts))

    def spawn(self, n: int) -> Sequence["Rng"]:
        return [self.child("spawn", i) for i in range(n)]

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_lognormal(rng: Rng, mean: float, var: float, n) -> np.ndarray:
    """exp(X̃) with X̃ ~ N(ln(μ²/√(μ²+σ²)), ln((μ²+σ²)/μ²)); E = mean, Var = var"""
    loc, scale2 = lognormal_parameters(mean, var)
    return np.exp(rng.normal(loc, np.sqrt(scale2), n))
