import argparse

from apps.bench.schemas import REGRESSION_IDS, ExperimentConfig, ModelSpec, Task
from apps.bench.services import exit_status, run_experiment
from apps.convex_nets.router import model_arguments, model_from_args
from apps.training.schemas import ConstantSchedule, CosineSchedule, TrainConfig
from core.cli import CommandRouter, arg, int_list

router = CommandRouter()


@router.command(
    "train-regression",
    summary="Fit a convex network to a synthetic regression task",
    arguments=(
        arg("--generator", choices=list(REGRESSION_IDS), default="f1"),
        arg("--d", type=int, default=5),
        arg("--n", type=int, default=5000),
        arg("--n-test", type=int, default=1000),
        arg("--sigma", type=float, default=1.0),
        *model_arguments(),
        arg("--epochs", type=int, default=100),
        arg("--batch-size", type=int, default=1000),
        arg("--lr", type=float, default=1e-2),
        arg("--cosine", action="store_true", help="cosine-decay the learning rate to 1%% over the epochs"),
        arg("--seeds", type=int_list, default=[0]),
        arg("--name", default="regression"),
        arg("--output", help="output root, defaults to HYCNN_OUTPUT_ROOT"),
    ),
)
def train_regression_command(args: argparse.Namespace) -> int:
    """Mini-batch Adam on the squared error; writes the run directory and prints its summary."""
    lr = CosineSchedule(v0=args.lr, T=max(args.epochs, 1)) if args.cosine else ConstantSchedule(v=args.lr)
    config = ExperimentConfig(
        name=args.name,
        task=Task.REGRESSION,
        generator=args.generator,
        d=args.d,
        n=args.n,
        n_test=args.n_test,
        sigma=args.sigma,
        model=ModelSpec(**model_from_args(args)),
        train=TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=lr),
        seeds=args.seeds,
        output=args.output,
    )
    summary = run_experiment(config)
    print(summary.model_dump_json(indent=2))
    return exit_status(summary)
