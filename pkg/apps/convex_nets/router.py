import argparse
import json
from typing import Tuple

from apps.convex_nets.schemas import Arch, GateKind, GateSpec, WeightStyle
from apps.convex_nets.services import init_diagnostics
from apps.training.services import write_rows
from core.cli import Argument, CommandRouter, arg
from core.config import settings

router = CommandRouter()


def model_arguments(default_gate: GateKind = GateKind.MAX) -> Tuple[Argument, ...]:
    """Flags shared by every command that builds a network"""
    return (
        arg("--arch", choices=[a.value for a in Arch], default=Arch.HYCNN.value),
        arg("--width", type=int, default=48),
        arg("--depth", type=int, default=4),
        arg("--gate", choices=[g.value for g in GateKind], default=default_gate.value),
        arg("--tau", type=float, default=None, help="temperature of smooth gates"),
        arg("--weight-style", choices=[w.value for w in WeightStyle], default=WeightStyle.LOGNORMAL.value),
    )


def model_from_args(args: argparse.Namespace) -> dict:
    """ModelSpec fields from the shared flags"""
    arch = Arch(args.arch)
    gate = GateSpec.from_name(args.gate, args.tau)
    if arch in (Arch.ICNN, Arch.ICNNQ) and not gate.single_lane:
        gate = GateSpec.relu()
    return {
        "arch": arch,
        "width": args.width,
        "depth": args.depth,
        "gate": gate,
        "weight_style": WeightStyle(args.weight_style),
    }


@router.command(
    "init-diagnostics",
    summary="Per-layer pre-activation moments of freshly initialized HyCNNs",
    arguments=(
        arg("--depth", type=int, default=16),
        arg("--width", type=int, default=48),
        arg("--d", type=int, default=50),
        arg("--seeds", type=int, default=100, help="number of seeds, starting at the default seed"),
        arg("--batch", type=int, default=64),
        arg("--rho", type=float, default=0.5, help="first-layer correlation"),
        arg("--out", help="CSV path for the per-layer rows"),
    ),
)
def init_diagnostics_command(args: argparse.Namespace) -> int:
    """E[s²], E[st], mean pre-activation and hidden-state norm per layer, averaged over seeds."""
    seeds = range(settings.DEFAULT_SEED, settings.DEFAULT_SEED + args.seeds)
    rows = init_diagnostics(args.depth, args.width, args.d, seeds, args.batch, args.rho)
    if args.out:
        write_rows(args.out, rows)
    print(json.dumps([row.model_dump() for row in rows], indent=2))
    return 0
