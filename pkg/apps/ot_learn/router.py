import argparse

from apps.bench.schemas import OT_IDS, SHAPE_IDS, ExperimentConfig, ModelSpec, Task
from apps.bench.services import exit_status, run_experiment
from apps.convex_nets.router import model_arguments, model_from_args
from apps.convex_nets.schemas import GateKind
from apps.ot_learn.models import CloudRole
from apps.ot_learn.schemas import OTConfig, SinkhornReport
from apps.ot_learn.services import read_cloud
from apps.ot_learn.sinkhorn import sinkhorn, sinkhorn_divergence
from apps.training.schemas import ConstantSchedule, CosineSchedule, CyclicCosineSchedule
from core.cli import CommandRouter, arg, int_list
from core.config import settings

router = CommandRouter()


@router.command(
    "train-ot",
    summary="Estimate a transport map as the gradient of a learned convex potential",
    arguments=(
        arg("--generator", choices=list(OT_IDS + SHAPE_IDS), default="phi1"),
        arg("--d", type=int, default=2),
        arg("--n", type=int, default=5000),
        arg("--m", type=int, default=None),
        *model_arguments(GateKind.LOGSUMEXP),
        arg("--T", dest="T", type=int, default=1000, help="outer iterations"),
        arg("--S", dest="S", type=int, default=5, help="critic steps per outer iteration"),
        arg("--M", dest="M", type=int, default=256, help="batch size"),
        arg("--lr", type=float, default=1e-2),
        arg("--constant-lr", action="store_true", help="keep the learning rate fixed instead of cosine-decaying it to 1%% over T"),
        arg("--cyclic-tau", action="store_true", help="restart a decaying tau every 100 outer iterations"),
        arg("--lambda-cvx", type=float, default=1.0, help="critic penalty of the ICNN baselines"),
        arg("--estimator", choices=["neural", "entropic"], default="neural"),
        arg("--entropic-eps", type=float, default=1.0),
        arg("--checkpoint-every", type=int, default=0),
        arg("--eval-every", type=int, default=0),
        arg("--select-k", type=int, default=0),
        arg("--val-eps", type=float, default=None),
        arg("--seeds", type=int_list, default=[0]),
        arg("--name", default="ot"),
        arg("--output", help="output root, defaults to HYCNN_OUTPUT_ROOT"),
    ),
)
def train_ot(args: argparse.Namespace) -> int:
    """Saddle-point training of potential and critic (or the entropic baseline); prints the run summary."""
    T = max(args.T, 1)
    lr = ConstantSchedule(v=args.lr) if args.constant_lr else CosineSchedule(v0=args.lr, final_ratio=0.01, T=T)
    tau = None
    if args.cyclic_tau:
        tau = CyclicCosineSchedule(v0=args.tau or 1.0, cycle_len=100, T=T)
    elif args.tau is not None:
        tau = ConstantSchedule(v=args.tau)
    ot = OTConfig(
        outer_T=args.T,
        inner_S=args.S,
        batch_M=args.M,
        lr=lr,
        tau=tau,
        lambda_cvx=args.lambda_cvx,
        checkpoint_every=args.checkpoint_every,
        eval_every=args.eval_every,
        val_eps=args.val_eps or settings.VALIDATION_EPS,
    )
    config = ExperimentConfig(
        name=args.name,
        task=Task.OT,
        generator=args.generator,
        d=args.d,
        n=args.n,
        m=args.m,
        model=ModelSpec(**model_from_args(args)),
        ot=ot,
        estimator=args.estimator,
        entropic_eps=args.entropic_eps,
        select_k=args.select_k,
        seeds=args.seeds,
        output=args.output,
    )
    summary = run_experiment(config)
    print(summary.model_dump_json(indent=2))
    return exit_status(summary)


@router.command(
    "sinkhorn-eval",
    summary="Entropic OT value and Sinkhorn divergence between two CSV point clouds",
    arguments=(
        arg("source", help="CSV with a header row, one point per line"),
        arg("target"),
        arg("--eps", type=float, default=None),
    ),
)
def sinkhorn_eval(args: argparse.Namespace) -> int:
    eps = args.eps or settings.VALIDATION_EPS
    src = read_cloud(args.source, CloudRole.SOURCE)
    tgt = read_cloud(args.target, CloudRole.TARGET)
    result = sinkhorn(src, tgt, eps)
    report = SinkhornReport(
        eps=eps,
        value=result.value,
        divergence=sinkhorn_divergence(src, tgt, eps),
        iterations=result.iterations,
        converged=result.converged,
    )
    print(report.model_dump_json(indent=2))
    return 0
