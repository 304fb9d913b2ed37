import csv
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from apps.convex_nets.schemas import GateKind
from apps.convex_nets.services import to_tensor, transport
from apps.ot_learn.models import Checkpoint, CloudRole, OTResult, PointCloud
from apps.ot_learn.schemas import OTConfig, OTTraceRow, SelectionReport
from apps.ot_learn.sinkhorn import sinkhorn_divergence
from apps.training.models import AdamState
from apps.training.services import adam_step, collect_gradients, schedule_value, trainable
from core.exceptions import ConfigurationError, ContractViolation, DivergenceError, UnsupportedGate
from core.tensor import Rng

logger = logging.getLogger(__name__)

Validation = Tuple[PointCloud, PointCloud]


def pushforward(potential: nn.Module, X) -> np.ndarray:
    """T̂(x) = ∇f(x), row by row"""
    return transport(potential, X).detach().numpy()


def map_mse(potential: nn.Module, X, TX) -> float:
    """E‖∇f(X) − T(X)‖² over the rows of X"""
    diff = pushforward(potential, X) - np.asarray(TX, dtype=np.float64)
    return float(np.mean(np.sum(diff**2, axis=1)))


def cvx_penalty(net: nn.Module) -> torch.Tensor:
    """Σ‖(V)₋‖²_F over hidden-to-hidden and hidden-to-output weights"""
    total = torch.zeros((), dtype=torch.float64)
    for V in net.hidden_weights():
        total = total + torch.relu(-V).pow(2).sum()
    return total


def semidual_objective(f: nn.Module, g: nn.Module, X: torch.Tensor, Y: torch.Tensor, through_critic: bool = True) -> torch.Tensor:
    """mean f(X) + mean[⟨Y, ∇g(Y)⟩ − f(∇g(Y))]; the critic ascends it, the potential descends it"""
    grad_g = transport(g, Y, create_graph=through_critic)
    if not through_critic:
        grad_g = grad_g.detach()
    return f(X).mean() + ((Y * grad_g).sum(dim=-1) - f(grad_g)).mean()


def critic_loss(f: nn.Module, g: nn.Module, X, Y, lambda_cvx: float = 0.0) -> torch.Tensor:
    """Quantity the critic minimizes: −objective + λ_cvx·penalty"""
    loss = -semidual_objective(f, g, to_tensor(X), to_tensor(Y))
    if lambda_cvx:
        loss = loss + lambda_cvx * cvx_penalty(g)
    return loss


def _gate_kind(net: nn.Module) -> Optional[GateKind]:
    gate = getattr(net, "gate", None)
    return None if gate is None else gate.kind


class SaddleTrainer:
    """Alternating Adam on potential f and critic g.

    Per outer iteration one source batch is drawn and kept for the S critic
    steps, each on a fresh target batch; the potential then takes one step on
    the source batch and the last target batch. Batches are drawn with
    replacement.
    """

    def __init__(self, config: OTConfig, rng: Rng, lambda_cvx: float = 0.0):
        self.config = config
        self.rng = rng
        self.lambda_cvx = lambda_cvx

    def _adam(self, params) -> Optional[AdamState]:
        if not params:
            return None
        beta1, beta2 = self.config.adam_betas
        return AdamState(params, beta1, beta2, self.config.adam_eps)

    def _check(self, value: torch.Tensor, t: int, s: int, trace: List[OTTraceRow]) -> float:
        value = float(value)
        if not math.isfinite(value):
            raise DivergenceError(f"OT training diverged at outer iteration {t}, step {s}: objective={value}", t, s, trace)
        return value

    def _validate(self, f: nn.Module, validation: Optional[Validation]) -> Optional[float]:
        if validation is None:
            return None
        val_src, val_tgt = validation
        return sinkhorn_divergence(pushforward(f, val_src.X), val_tgt, self.config.val_eps)

    def fit(
        self,
        f: nn.Module,
        g: nn.Module,
        src: PointCloud,
        tgt: PointCloud,
        validation: Optional[Validation] = None,
    ) -> OTResult:
        cfg = self.config
        d = src.dim
        if tgt.dim != d or f.input_dim != d or g.input_dim != d:
            raise ContractViolation(
                f"dimension mismatch: source {d}, target {tgt.dim}, potential {f.input_dim}, critic {g.input_dim}"
            )
        M = cfg.batch_M
        if M > min(src.n, tgt.n):
            raise ContractViolation(f"batch_M={M} exceeds the smaller cloud ({min(src.n, tgt.n)} points)")

        Xs = to_tensor(src.X)
        Ys = to_tensor(tgt.X)
        f_params = trainable(f)
        g_params = trainable(g)
        if not g_params:
            raise ContractViolation("critic has no trainable parameters")
        f_state = self._adam(f_params)
        g_state = self._adam(g_params)

        trace: List[OTTraceRow] = []
        checkpoints: List[Checkpoint] = []
        logger.info(f"Saddle training f={f!r} g={g!r}: T={cfg.outer_T}, S={cfg.inner_S}, M={M}, n={src.n}, m={tgt.n}")

        for t in range(1, cfg.outer_T + 1):
            lr = schedule_value(cfg.lr, t - 1)
            tau = None
            if cfg.tau is not None:
                tau = schedule_value(cfg.tau, t - 1)
                f.set_tau(tau)
                g.set_tau(tau)

            X = Xs[torch.as_tensor(self.rng.child("source", t).integers(0, src.n, M))]
            for s in range(1, cfg.inner_S + 1):
                Y = Ys[torch.as_tensor(self.rng.child("target", t, s).integers(0, tgt.n, M))]
                loss = critic_loss(f, g, X, Y, self.lambda_cvx)
                self._check(loss, t, s, trace)
                grads = torch.autograd.grad(loss, list(g_params.values()), allow_unused=True)
                adam_step(g_params, collect_gradients(g_params, grads), g_state, lr)

            objective = semidual_objective(f, g, X, Y, through_critic=False)
            value = self._check(objective, t, 0, trace)
            if f_state is not None:
                grads = torch.autograd.grad(objective, list(f_params.values()), allow_unused=True)
                adam_step(f_params, collect_gradients(f_params, grads), f_state, lr)

            row = OTTraceRow(outer_iter=t, objective=value, tau=tau, lr=lr)
            if cfg.eval_every and t % cfg.eval_every == 0:
                row.val_sinkhorn = self._validate(f, validation)
            trace.append(row)
            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
                checkpoints.append(Checkpoint(outer_iter=t, f=f.clone(), g=g.clone(), val_sinkhorn=row.val_sinkhorn))
            logger.debug(f"outer {t}: objective={value:.6e} lr={lr:.3e} tau={tau}")

        if trace:
            logger.info(f"Finished saddle training: objective={trace[-1].objective:.6e}")
        return OTResult(f=f, g=g, trace=trace, checkpoints=checkpoints)


def saddle_train(
    f: nn.Module,
    g: nn.Module,
    src: PointCloud,
    tgt: PointCloud,
    config: Optional[OTConfig] = None,
    validation: Optional[Validation] = None,
    rng: Optional[Rng] = None,
) -> OTResult:
    """Min-max training of a smooth convex potential and critic; T̂ = ∇f"""
    config = config or OTConfig()
    for role, net in (("potential", f), ("critic", g)):
        gate = getattr(net, "gate", None)
        if gate is not None and not gate.smooth:
            raise UnsupportedGate(f"saddle training needs a smooth {role} gate, got {gate.kind.value}")
    return SaddleTrainer(config, rng or Rng(config.seed)).fit(f, g, src, tgt, validation)


def icnn_baseline_train(
    f: nn.Module,
    g: nn.Module,
    src: PointCloud,
    tgt: PointCloud,
    config: Optional[OTConfig] = None,
    validation: Optional[Validation] = None,
    rng: Optional[Rng] = None,
) -> OTResult:
    """Saddle training with an unconstrained critic and the soft penalty λ_cvx·Σ‖(V)₋‖²"""
    config = config or OTConfig()
    for role, net in (("potential", f), ("critic", g)):
        if _gate_kind(net) == GateKind.MAX:
            raise UnsupportedGate(f"the ICNN baseline has no {role} with a max gate")
    return SaddleTrainer(config, rng or Rng(config.seed), lambda_cvx=config.lambda_cvx).fit(f, g, src, tgt, validation)


def checkpoint_select(
    checkpoints: Sequence[Checkpoint],
    val_src: PointCloud,
    val_tgt: PointCloud,
    K: int,
    eps: float = 0.1,
    test_src: Optional[PointCloud] = None,
    test_tgt: Optional[PointCloud] = None,
) -> SelectionReport:
    """K checkpoints with the smallest validation divergence S_ε(T̂#P_val, Q_val)"""
    if K < 1 or K > len(checkpoints):
        raise ContractViolation(f"cannot select K={K} out of {len(checkpoints)} checkpoints")
    scores = [sinkhorn_divergence(pushforward(c.f, val_src.X), val_tgt, eps) for c in checkpoints]
    chosen = [int(i) for i in np.argsort(scores, kind="stable")[:K]]
    if test_src is not None and test_tgt is not None:
        tests = [sinkhorn_divergence(pushforward(checkpoints[i].f, test_src.X), test_tgt, eps) for i in chosen]
    else:
        tests = [scores[i] for i in chosen]
    report = SelectionReport(
        indices=chosen,
        outer_iters=[checkpoints[i].outer_iter for i in chosen],
        val_scores=[scores[i] for i in chosen],
        test_metric=float(np.mean(tests)),
    )
    logger.info(f"Selected checkpoints {report.outer_iters}: mean test divergence {report.test_metric:.6e}")
    return report


def write_map(path: Union[str, Path], X, TX) -> Path:
    """CSV with columns x1..xd, t1..td"""
    X = np.asarray(X, dtype=np.float64)
    TX = np.asarray(TX, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = X.shape[1]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"x{i}" for i in range(1, d + 1)] + [f"t{i}" for i in range(1, d + 1)])
        for x, tx in zip(X, TX):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in tx])
    return path


def read_cloud(path: Union[str, Path], role: CloudRole = CloudRole.SOURCE) -> PointCloud:
    """Point cloud from a CSV of coordinates with a header row"""
    try:
        rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Cannot read point cloud {path}: {e}")
    return PointCloud(rows, role)
