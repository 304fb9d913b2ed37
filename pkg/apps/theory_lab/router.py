import argparse
import json

from apps.convex_nets.schemas import GateSpec
from apps.convex_nets.services import load_net, save_net
from apps.theory_lab.pwa import pwa_of_network
from apps.theory_lab.services import (
    build_construction,
    embedding_checks,
    kink_bound,
    lower_bound_search,
    piece_bound,
    random_piece_counts,
    random_width_piece_counts,
)
from core.cli import CommandRouter, arg, int_list
from core.config import settings
from core.tensor import Rng

router = CommandRouter()


def _emit(model) -> None:
    print(model.model_dump_json(by_alias=True, indent=2))


@router.command(
    "construct",
    summary="Build an explicit approximation network and print its certificate",
    arguments=(
        arg("target", choices=["quadratic", "quadratic2", "monomial", "multiquad"]),
        arg("--widths", type=int_list, help="even widths for the quadratic construction, e.g. 2,2"),
        arg("--L", dest="L", type=int, default=2, help="depth (blocks of L layers for monomials)"),
        arg("--n", type=int, default=2, help="monomial degree"),
        arg("--m", type=int, default=3, help="width of monomial / multivariate nets"),
        arg("--d", type=int, default=2, help="input dimension of the multivariate net"),
        arg("--positive", action="store_true", help="quadratic without the downward shift"),
        arg("--save", help="write the network document to this path"),
    ),
)
def construct(args: argparse.Namespace) -> int:
    """Constructions for x², xⁿ and ‖x‖² with exact or grid certificates."""
    net, cert = build_construction(
        args.target,
        widths=args.widths,
        L=args.L,
        n=args.n,
        m=args.m,
        d=args.d,
        positive=args.positive,
        rng=Rng(settings.DEFAULT_SEED),
    )
    if args.save:
        save_net(net, args.save, metadata={"certificate": cert.model_dump(mode="json", by_alias=True)})
    _emit(cert)
    return 0 if cert.passed else 1


@router.command(
    "pieces",
    summary="Piece counts of a saved univariate network or of random ICNNs",
    arguments=(
        arg("net", nargs="?", help="network document (JSON); omit to sample random ICNNs"),
        arg("--lo", type=float, default=0.0),
        arg("--hi", type=float, default=1.0),
        arg("--widths", type=int_list, default=[3, 2], help="widths of the random ICNNs"),
        arg("--gate", choices=["relu", "leaky_relu"], default="relu"),
        arg("--seeds", type=int, default=50, help="number of random ICNNs"),
        arg("--random-widths", action="store_true", help="draw depth ≤ 4 and widths ≤ 6 per net, alternating ReLU and LeakyReLU"),
    ),
)
def pieces(args: argparse.Namespace) -> int:
    """Exact piecewise-affine form of a network, or the piece bound check on random ICNNs."""
    if args.net is None:
        gate = GateSpec.relu() if args.gate == "relu" else GateSpec.leaky_relu()
        if args.random_widths:
            reports = random_width_piece_counts(args.seeds, Rng(settings.DEFAULT_SEED))
        else:
            reports = random_piece_counts(args.widths, range(args.seeds), gate)
        print(json.dumps([r.model_dump() for r in reports], indent=2))
        return 0 if all(r.passed for r in reports) else 1
    net = load_net(args.net)
    pwa = pwa_of_network(net, (args.lo, args.hi))
    report = {
        "pieces": pwa.piece_count,
        "kinks": pwa.piece_count - 1,
        "icnn_kink_bound": kink_bound(net.widths),
        "icnn_piece_bound": piece_bound(net.widths),
        "convex": pwa.is_convex(1e-9),
        "breakpoints": pwa.breakpoints.tolist(),
        "slopes": pwa.slopes.tolist(),
        "anchor": pwa.anchor,
    }
    print(json.dumps(report, indent=2))
    return 0


@router.command(
    "lower-bound",
    summary="Grid search for the best convex k-piece fit of x²",
    arguments=(
        arg("--k", type=int, required=True),
        arg("--resolution", type=int, default=120),
    ),
)
def lower_bound(args: argparse.Namespace) -> int:
    _emit(lower_bound_search(args.k, args.resolution))
    return 0


@router.command(
    "embed-check",
    summary="Verify ICNN ⊂ HyCNN ⊂ ReLU-net embeddings and the separation witness",
    arguments=(
        arg("--seed", type=int, default=None),
        arg("--samples", type=int, default=1000),
    ),
)
def embed_check(args: argparse.Namespace) -> int:
    seed = settings.DEFAULT_SEED if args.seed is None else args.seed
    report = embedding_checks(Rng(seed), args.samples)
    _emit(report)
    return 0 if report.passed else 1
