import csv
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import torch

from apps.convex_nets.models import ConvexNet
from apps.convex_nets.services import to_tensor
from apps.training.models import AdamState, GradTape, RegressionResult, StandardizedPredictor
from apps.training.schemas import EpochRecord, Schedule, TrainConfig
from core.exceptions import ContractViolation, DivergenceError, UnsupportedGate
from core.tensor import Rng

logger = logging.getLogger(__name__)


def trainable(net: torch.nn.Module) -> Dict[str, torch.nn.Parameter]:
    return {name: p for name, p in net.named_parameters() if p.requires_grad}


def collect_gradients(params: Dict[str, torch.nn.Parameter], grads) -> Dict[str, torch.Tensor]:
    return {
        name: (torch.zeros_like(p) if g is None else g.detach())
        for (name, p), g in zip(params.items(), grads)
    }


def param_gradients(net: ConvexNet, tape: GradTape, upstream: float = 1.0) -> Dict[str, torch.Tensor]:
    """Gradient of upstream·Σ output with respect to every trainable parameter"""
    if tape.net is not net:
        raise ContractViolation("tape was recorded on a different network")
    if tape.is_stale():
        raise ContractViolation("tape is stale: parameters changed after the forward pass")
    params = trainable(net)
    grads = torch.autograd.grad(
        tape.output.sum() * upstream, list(params.values()), retain_graph=True, allow_unused=True
    )
    return collect_gradients(params, grads)


def grad_of_input_grad(net: ConvexNet, x, v) -> Dict[str, torch.Tensor]:
    """∂/∂θ ⟨∇ₓ net(x), v⟩ summed over the batch"""
    if not net.gate.smooth:
        raise UnsupportedGate(f"second-order gradients need a smooth gate, got {net.gate.kind.value}")
    xt = to_tensor(x).detach().clone().requires_grad_(True)
    vt = to_tensor(v)
    if vt.shape != xt.shape:
        raise ContractViolation(f"direction shape {tuple(vt.shape)} does not match input {tuple(xt.shape)}")
    params = trainable(net)
    (gx,) = torch.autograd.grad(net(xt).sum(), xt, create_graph=True)
    grads = torch.autograd.grad((gx * vt).sum(), list(params.values()), allow_unused=True)
    return collect_gradients(params, grads)


def adam_step(
    params: Dict[str, torch.nn.Parameter],
    grads: Dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update in place"""
    if set(params) != set(state.params):
        raise ContractViolation("parameters do not match the optimizer state")
    if not lr > 0:
        raise ContractViolation(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        p.grad = g.detach().clone()
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)


def schedule_value(schedule: Schedule, t: float) -> float:
    return schedule.at(t)


def standardization(X: np.ndarray, enabled: bool = True):
    if not enabled:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


class RegressionTrainer:
    """Mini-batch Adam on the mean squared error"""

    def __init__(self, config: TrainConfig, rng: Rng):
        self.config = config
        self.rng = rng

    def _check(self, loss: torch.Tensor, epoch: int, batch: int, trace: List[EpochRecord]) -> float:
        value = float(loss)
        if not math.isfinite(value) or value > self.config.divergence_threshold:
            raise DivergenceError(f"Training diverged at epoch {epoch}, batch {batch}: loss={value}", epoch, batch, trace)
        return value

    def _record(self, net: ConvexNet, epoch: int, mse: float, lr: float) -> EpochRecord:
        return EpochRecord(epoch=epoch, train_mse=mse, lr=lr, tau=net.gate.tau)

    def fit(self, net: ConvexNet, X, y) -> RegressionResult:
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise ContractViolation(f"expected X of shape (n, d) and y of shape (n,), got {X.shape} and {y.shape}")
        if X.shape[1] != net.input_dim:
            raise ContractViolation(f"network expects dimension {net.input_dim}, data has {X.shape[1]}")

        n = X.shape[0]
        mean, std = standardization(X, cfg.standardize)
        Xs = to_tensor((X - mean) / std)
        yt = to_tensor(y)
        batch = min(cfg.batch_size, n)

        params = trainable(net)
        state = AdamState(params, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps)

        def full_mse() -> torch.Tensor:
            with torch.no_grad():
                return ((net(Xs) - yt) ** 2).mean()

        if cfg.tau is not None:
            net.set_tau(schedule_value(cfg.tau, 0))
        trace = [self._record(net, 0, self._check(full_mse(), 0, 0, []), schedule_value(cfg.lr, 0))]
        logger.info(f"Training {net!r} on {n} samples for {cfg.epochs} epochs (batch {batch})")

        for epoch in range(1, cfg.epochs + 1):
            lr = schedule_value(cfg.lr, epoch - 1)
            if cfg.tau is not None:
                net.set_tau(schedule_value(cfg.tau, epoch - 1))
            order = self.rng.child("epoch", epoch).permutation(n)
            for index, start in enumerate(range(0, n, batch)):
                idx = torch.as_tensor(order[start : start + batch])
                loss = ((net(Xs[idx]) - yt[idx]) ** 2).mean()
                self._check(loss, epoch, index, trace)
                grads = collect_gradients(params, torch.autograd.grad(loss, list(params.values()), allow_unused=True))
                adam_step(params, grads, state, lr)
            mse = self._check(full_mse(), epoch, -1, trace)
            trace.append(self._record(net, epoch, mse, lr))
            logger.debug(f"epoch {epoch}: train_mse={mse:.6e} lr={lr:.3e}")

        logger.info(f"Finished training: train_mse={trace[-1].train_mse:.6e}")
        return RegressionResult(predictor=StandardizedPredictor(net, mean, std), trace=trace)


def train_regression(net: ConvexNet, X, y, config: Optional[TrainConfig] = None, rng: Optional[Rng] = None) -> RegressionResult:
    config = config or TrainConfig()
    return RegressionTrainer(config, rng or Rng(config.seed)).fit(net, X, y)


def mse(predictor, X, y) -> float:
    pred = np.atleast_1d(predictor(X))
    return float(np.mean((pred - np.asarray(y, dtype=np.float64).reshape(-1)) ** 2))


def write_rows(path: Union[str, Path], rows: Iterable) -> Path:
    """CSV with one row per record (pydantic model or dict); the header is the union of keys"""
    dumped = [row if isinstance(row, dict) else row.model_dump(mode="json") for row in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        if not dumped:
            return path
        fields = list(dict.fromkeys(key for row in dumped for key in row))
        writer = csv.DictWriter(handle, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(dumped)
    return path
