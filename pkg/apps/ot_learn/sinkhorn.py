"""Entropic optimal transport between uniform point clouds.

Log-domain Sinkhorn iterations on the dual potentials (f, g) for the cost
c(x, y) = ½‖x − y‖², regularized by ε·KL(π ‖ a ⊗ b).
"""
import logging
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from apps.ot_learn.models import PointCloud, SinkhornResult
from core.config import settings
from core.exceptions import ContractViolation
from core.tensor import Matrix, Vector, as_matrix, as_vector

logger = logging.getLogger(__name__)

Cloud = Union[PointCloud, ArrayLike]


def _points(cloud: Cloud, name: str) -> Matrix:
    if isinstance(cloud, PointCloud):
        return cloud.X
    X = as_matrix(cloud, name=name)
    if X.shape[0] < 1:
        raise ContractViolation(f"{name} is empty")
    return X


def cost_matrix(X: Matrix, Y: Matrix) -> Matrix:
    if X.shape[1] != Y.shape[1]:
        raise ContractViolation(f"clouds live in different dimensions: {X.shape[1]} and {Y.shape[1]}")
    return 0.5 * cdist(X, Y, "sqeuclidean")


def _check_eps(eps: float) -> float:
    if not eps > 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    return float(eps)


def sinkhorn(
    a_cloud: Cloud,
    b_cloud: Cloud,
    eps: float,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> SinkhornResult:
    """Entropic OT value ⟨a, f⟩ + ⟨b, g⟩ and the dual potentials"""
    eps = _check_eps(eps)
    max_iter = settings.SINKHORN_MAX_ITER if max_iter is None else max_iter
    tol = settings.SINKHORN_TOL if tol is None else tol
    X = _points(a_cloud, "source cloud")
    Y = _points(b_cloud, "target cloud")
    C = cost_matrix(X, Y)
    n, m = C.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))

    f = np.zeros(n)
    g = np.zeros(m)
    converged = False
    iterations = 0
    change = np.inf
    for iterations in range(1, max_iter + 1):
        f_new = -eps * logsumexp(log_b[None, :] + (g[None, :] - C) / eps, axis=1)
        g_new = -eps * logsumexp(log_a[:, None] + (f_new[:, None] - C) / eps, axis=0)
        change = max(np.abs(f_new - f).max(), np.abs(g_new - g).max())
        f, g = f_new, g_new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"Sinkhorn did not converge in {max_iter} iterations (eps={eps}, last change {change:.3e})")

    # g was updated last, so the plan has unit mass and the dual penalty vanishes
    value = float(np.exp(log_a) @ f + np.exp(log_b) @ g)
    logger.debug(f"Sinkhorn {n}x{m} eps={eps}: value={value:.6e} after {iterations} iterations")
    return SinkhornResult(value=value, f=as_vector(f, "f"), g=as_vector(g, "g"), iterations=iterations, converged=converged)


def sinkhorn_divergence(a_cloud: Cloud, b_cloud: Cloud, eps: float, **kwargs) -> float:
    """S_ε(μ, ν) = OT_ε(μ, ν) − ½OT_ε(μ, μ) − ½OT_ε(ν, ν)"""
    _check_eps(eps)
    X = _points(a_cloud, "source cloud")
    Y = _points(b_cloud, "target cloud")
    # fixed argument order makes the value exactly symmetric
    if X.tobytes() > Y.tobytes():
        X, Y = Y, X
    cross = sinkhorn(X, Y, eps, **kwargs).value
    self_x = sinkhorn(X, X, eps, **kwargs).value
    self_y = sinkhorn(Y, Y, eps, **kwargs).value
    return cross - 0.5 * self_x - 0.5 * self_y


def barycentric_weights(x: ArrayLike, tgt: Matrix, g_star: Vector, eps: float) -> Matrix:
    """Rows w(x) ∝ exp((g*(Y_j) − c(x, Y_j))/ε); one row per query point"""
    eps = _check_eps(eps)
    Q = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g_star = np.asarray(g_star, dtype=np.float64)
    if g_star.shape != (tgt.shape[0],):
        raise ContractViolation(f"g_star has shape {g_star.shape}, expected ({tgt.shape[0]},)")
    return softmax((g_star[None, :] - cost_matrix(Q, tgt)) / eps, axis=1)


def barycentric_map(src_point: ArrayLike, tgt_cloud: Cloud, g_star: Vector, eps: float) -> np.ndarray:
    """Out-of-sample entropic map T̂_ε(x) = Σ_j w_j(x) Y_j; a batch of rows maps row-wise"""
    tgt = _points(tgt_cloud, "target cloud")
    W = barycentric_weights(src_point, tgt, g_star, eps)
    out = W @ tgt
    return out[0] if np.ndim(src_point) == 1 else out


class EntropicMapEstimator:
    """Barycentric projection of the entropic plan, extended to fresh points"""

    def __init__(self, eps: float = 1.0, max_iter: Optional[int] = None, tol: Optional[float] = None):
        self.eps = _check_eps(eps)
        self.max_iter = max_iter
        self.tol = tol
        self.target: Optional[Matrix] = None
        self.result: Optional[SinkhornResult] = None

    def fit(self, src: Cloud, tgt: Cloud) -> "EntropicMapEstimator":
        self.target = _points(tgt, "target cloud")
        self.result = sinkhorn(src, self.target, self.eps, self.max_iter, self.tol)
        logger.info(f"Fitted entropic map (eps={self.eps}): OT value {self.result.value:.6e}")
        return self

    def predict(self, X: ArrayLike) -> np.ndarray:
        if self.result is None:
            raise ContractViolation("EntropicMapEstimator.predict called before fit")
        return barycentric_map(X, self.target, self.result.g, self.eps)
