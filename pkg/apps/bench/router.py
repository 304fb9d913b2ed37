import argparse
import json
from pathlib import Path

from apps.bench.generators import generate
from apps.bench.models import RegressionData
from apps.bench.schemas import GENERATOR_IDS, GeneratorSpec
from apps.bench.services import exit_status, load_config, run_experiment, summarize
from apps.training.services import write_rows
from core.cli import CommandRouter, arg, int_list
from core.config import settings
from core.tensor import Rng

router = CommandRouter()


def _coords(prefix: str, row) -> dict:
    return {f"{prefix}{i}": float(v) for i, v in enumerate(row, start=1)}


@router.command(
    "gen",
    summary="Sample a synthetic dataset to CSV",
    arguments=(
        arg("generator", choices=list(GENERATOR_IDS)),
        arg("--d", type=int, default=2),
        arg("--n", type=int, default=1000),
        arg("--m", type=int, default=None),
        arg("--sigma", type=float, default=0.0),
        arg("--seed", type=int, default=None),
        arg("--out", help="CSV path, defaults to <output root>/data/<generator>_seed<seed>.csv"),
    ),
)
def gen(args: argparse.Namespace) -> int:
    """Regression generators write x1..xd, y, clean; transport and shape generators write role, x1..xd."""
    seed = settings.DEFAULT_SEED if args.seed is None else args.seed
    spec = GeneratorSpec(id=args.generator, d=args.d, sigma=args.sigma, mu_seed=seed)
    data = generate(spec, args.n, Rng(seed).child("gen"), args.m)
    if isinstance(data, RegressionData):
        rows = [{**_coords("x", x), "y": float(y), "clean": float(c)} for x, y, c in zip(data.X, data.y, data.clean)]
    else:
        rows = [{"role": "source", **_coords("x", x)} for x in data.source.X]
        rows += [{"role": "target", **_coords("x", y)} for y in data.target.X]
    out = Path(args.out or Path(settings.HYCNN_OUTPUT_ROOT) / "data" / f"{args.generator}_seed{seed}.csv")
    write_rows(out, rows)
    print(json.dumps({"generator": args.generator, "rows": len(rows), "path": str(out)}))
    return 0


@router.command(
    "run",
    summary="Run an experiment config (JSON) over its seeds",
    arguments=(
        arg("config", help="ExperimentConfig JSON file"),
        arg("--seeds", type=int_list, default=None, help="override the seeds, e.g. 0,1,2"),
        arg("--name", default=None),
        arg("--output", default=None, help="override the output root"),
    ),
)
def run(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seeds": args.seeds, "name": args.name, "output": args.output})
    summary = run_experiment(config)
    print(summary.model_dump_json(indent=2))
    return exit_status(summary)


@router.command(
    "summarize",
    summary="Merge run directories into one comparison table",
    arguments=(
        arg("run_dirs", nargs="+"),
        arg("--out", help="CSV path, defaults to <output root>/summary.csv"),
    ),
)
def summarize_command(args: argparse.Namespace) -> int:
    out = args.out or Path(settings.HYCNN_OUTPUT_ROOT) / "summary.csv"
    table = summarize(args.run_dirs, out)
    print(json.dumps(table, indent=2))
    return 0
