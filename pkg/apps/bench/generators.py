"""Synthetic data for the regression, transport and 2-D shape tasks.

Regression inputs are Unif[−1,1]^d with additive N(0, σ²) noise. Transport
tasks push P forward through ∇φ; P is N(0, I) except for phi4, which uses
Unif[−1,1]^d. Source and target samples are drawn independently.

Shape parameterizations:
  checkerboard   unit squares of a 3×3 board centred at the origin; the five
                 cells with even index sum map to the four with odd sum
  halfmoon       N(0, I) to the upper unit half-circle shifted down by ½,
                 radial noise 0.1
  moons-rotated  that half-moon shifted by (−½, 0) to its copy rotated by a
                 quarter turn and shifted by (½, 0)
  gauss-ring     N(0, I) to eight N(·, 0.2²) components on the circle of radius 2
"""
import logging
import math
from typing import Callable, Optional, Union

import numpy as np

from apps.bench.models import RegressionData, TransportData
from apps.bench.schemas import OT_IDS, REGRESSION_IDS, SHAPE_IDS, GeneratorSpec
from apps.ot_learn.models import CloudRole, PointCloud
from core.exceptions import ConfigurationError
from core.tensor import Rng

logger = logging.getLogger(__name__)

Function = Callable[[np.ndarray], np.ndarray]


def f6_center(d: int, mu_seed: int) -> np.ndarray:
    return Rng(mu_seed).child("f6", "mu").normal(0.0, math.sqrt(1.0 / d), d)


def regression_function(spec: GeneratorSpec) -> Function:
    """Clean signal of an f-generator, evaluated row-wise"""
    d = spec.d
    if spec.id == "f1":
        return lambda X: np.sum(X**2, axis=1)
    if spec.id == "f2":
        return lambda X: np.sum(X**4, axis=1)
    if spec.id == "f3":
        return lambda X: np.sum(X**2, axis=1) + 0.25 * np.sin(20.0 * np.linalg.norm(X, axis=1))
    if spec.id == "f4":
        return lambda X: np.sum(np.abs(X), axis=1)
    if spec.id == "f5":
        return lambda X: np.exp(np.sum(np.abs(X), axis=1) / math.sqrt(d))
    if spec.id == "f6":
        mu = f6_center(d, spec.mu_seed)
        return lambda X: np.maximum(np.sum((X - mu) ** 2, axis=1), np.sum((X + mu) ** 2, axis=1))
    raise ConfigurationError(f"Unknown regression generator: {spec.id}")


def potential(spec: GeneratorSpec) -> Function:
    """Brenier potential φ of a transport task"""
    coef = 1.0 + np.sin(np.arange(1, spec.d + 1)) / 2.0
    if spec.id == "phi1":
        return lambda X: 0.5 * np.sum(X**2, axis=1)
    if spec.id == "phi2":
        return lambda X: 0.5 * np.sum(coef * X**2, axis=1)
    if spec.id == "phi3":
        return lambda X: 0.5 * np.sum(X**2, axis=1) + np.sum(np.abs(X), axis=1)
    if spec.id == "phi4":
        return lambda X: np.sum(X**4, axis=1)
    raise ConfigurationError(f"Unknown transport generator: {spec.id}")


def transport_map(spec: GeneratorSpec) -> Function:
    """T = ∇φ of a transport task"""
    coef = 1.0 + np.sin(np.arange(1, spec.d + 1)) / 2.0
    if spec.id == "phi1":
        return lambda X: np.array(X, dtype=np.float64)
    if spec.id == "phi2":
        return lambda X: coef * X
    if spec.id == "phi3":
        return lambda X: X + np.sign(X)
    if spec.id == "phi4":
        return lambda X: 4.0 * X**3
    raise ConfigurationError(f"Unknown transport generator: {spec.id}")


def source_sampler(spec: GeneratorSpec) -> Callable[[Rng, int], np.ndarray]:
    if spec.id == "phi4":
        return lambda rng, n: rng.uniform(-1.0, 1.0, (n, spec.d))
    return lambda rng, n: rng.normal(size=(n, spec.d))


# ---------------------------------------------------------------- 2-D shapes


def _board(rng: Rng, n: int, even: bool) -> np.ndarray:
    cells = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if ((i + j) % 2 == 0) == even]
    pick = rng.child("cell").integers(0, len(cells), n)
    centres = np.asarray(cells, dtype=np.float64)[pick]
    return centres + rng.child("offset").uniform(-0.5, 0.5, (n, 2))


def _moon(rng: Rng, n: int) -> np.ndarray:
    theta = rng.child("angle").uniform(0.0, math.pi, n)
    radius = 1.0 + 0.1 * rng.child("radius").normal(size=n)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta) - 0.5], axis=1)


def _ring(rng: Rng, n: int) -> np.ndarray:
    angles = 2.0 * math.pi * rng.child("component").integers(0, 8, n) / 8.0
    centres = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centres + 0.2 * rng.child("noise").normal(size=(n, 2))


def _quarter_turn(X: np.ndarray) -> np.ndarray:
    return np.stack([-X[:, 1], X[:, 0]], axis=1)


def shape_pair(name: str, rng: Rng, n: int, m: int):
    src_rng, tgt_rng = rng.child("source"), rng.child("target")
    if name == "checkerboard":
        return _board(src_rng, n, True), _board(tgt_rng, m, False)
    if name == "halfmoon":
        return src_rng.normal(size=(n, 2)), _moon(tgt_rng, m)
    if name == "moons-rotated":
        return _moon(src_rng, n) + [-0.5, 0.0], _quarter_turn(_moon(tgt_rng, m)) + [0.5, 0.0]
    if name == "gauss-ring":
        return src_rng.normal(size=(n, 2)), _ring(tgt_rng, m)
    raise ConfigurationError(f"Unknown shape generator: {name}")


# ---------------------------------------------------------------- entry point


def generate(spec: GeneratorSpec, n: int, rng: Rng, m: Optional[int] = None) -> Union[RegressionData, TransportData]:
    """Dataset of a generator; deterministic in (spec, n, m, rng)"""
    m = n if m is None else m
    if spec.id in REGRESSION_IDS:
        X = rng.child("x").uniform(-1.0, 1.0, (n, spec.d))
        clean = regression_function(spec)(X)
        y = clean + spec.sigma * rng.child("noise").normal(size=n) if spec.sigma > 0 else clean.copy()
        data = RegressionData(X=X, y=y, clean=clean)
    elif spec.id in OT_IDS:
        sample = source_sampler(spec)
        T = transport_map(spec)
        data = TransportData(
            source=PointCloud(sample(rng.child("source"), n), CloudRole.SOURCE),
            target=PointCloud(T(sample(rng.child("target"), m)), CloudRole.TARGET),
            transport_map=T,
        )
    elif spec.id in SHAPE_IDS:
        if spec.d != 2:
            raise ConfigurationError(f"shape generator {spec.id} is two-dimensional, got d={spec.d}")
        X, Y = shape_pair(spec.id, rng, n, m)
        data = TransportData(source=PointCloud(X, CloudRole.SOURCE), target=PointCloud(Y, CloudRole.TARGET))
    else:
        raise ConfigurationError(f"Unknown generator: {spec.id}")
    logger.debug(f"Generated {spec.id} (d={spec.d}, n={n}, m={m})")
    return data
