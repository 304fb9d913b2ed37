from dataclasses import dataclass
from typing import Iterator, Tuple, Union

import numpy as np

from core.exceptions import ContractViolation


@dataclass(frozen=True)
class PiecewiseAffine1D:
    """Continuous piecewise-affine function on [lo, hi].

    Values are propagated from ``anchor`` = p(lo) through the slopes, so the
    function is continuous by construction.
    """

    lo: float
    hi: float
    breakpoints: np.ndarray
    slopes: np.ndarray
    anchor: float

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64).reshape(-1)
        slopes = np.asarray(self.slopes, dtype=np.float64).reshape(-1)
        if not self.lo < self.hi:
            raise ContractViolation(f"empty interval [{self.lo}, {self.hi}]")
        if slopes.size != bp.size + 1:
            raise ContractViolation(f"{bp.size} breakpoints need {bp.size + 1} slopes, got {slopes.size}")
        if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] <= self.lo or bp[-1] >= self.hi):
            raise ContractViolation("breakpoints must be strictly increasing inside (lo, hi)")
        bp.setflags(write=False)
        slopes.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "anchor", float(self.anchor))

    @classmethod
    def from_knots(cls, knots, values) -> "PiecewiseAffine1D":
        knots = np.asarray(knots, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        slopes = np.diff(values) / np.diff(knots)
        return cls(float(knots[0]), float(knots[-1]), knots[1:-1], slopes, float(values[0]))

    @property
    def piece_count(self) -> int:
        return int(self.slopes.size)

    @property
    def knots(self) -> np.ndarray:
        return np.concatenate([[self.lo], self.breakpoints, [self.hi]])

    @property
    def knot_values(self) -> np.ndarray:
        steps = self.slopes * np.diff(self.knots)
        return self.anchor + np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def intercepts(self) -> np.ndarray:
        return self.knot_values[:-1] - self.slopes * self.knots[:-1]

    def is_convex(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.slopes) >= -tol))

    def pieces(self) -> Iterator[Tuple[float, float, float, float]]:
        """(left, right, slope, intercept) per piece"""
        knots = self.knots
        for i, (s, c) in enumerate(zip(self.slopes, self.intercepts)):
            yield float(knots[i]), float(knots[i + 1]), float(s), float(c)

    def scaled(self, factor: float) -> "PiecewiseAffine1D":
        return PiecewiseAffine1D(self.lo, self.hi, self.breakpoints, self.slopes * factor, self.anchor * factor)

    def __call__(self, x) -> Union[float, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, x, side="right")
        out = self.slopes[idx] * x + self.intercepts[idx]
        return float(out) if out.ndim == 0 else out
