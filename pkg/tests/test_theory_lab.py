import math

import numpy as np
import pytest

from apps.convex_nets.schemas import GateSpec
from apps.convex_nets.services import forward, init_hycnn, init_icnn_hoedt
from apps.theory_lab.constructions import (
    best_multiquad_plan,
    compose_hycnn,
    homogenize,
    monomial_digits,
    quadratic_net,
)
from apps.theory_lab.models import PiecewiseAffine1D
from apps.theory_lab.pwa import pwa_of_network
from apps.theory_lab.services import (
    build_construction,
    build_monomial_hycnn,
    build_multivariate_quadratic,
    build_quadratic_hycnn,
    build_quadratic_width2,
    chebyshev_lines,
    diagonal_floor_check,
    embedding_checks,
    envelope_error,
    envelope_pwa,
    hycnn_to_relu,
    icnn_sup_floor,
    icnn_to_hycnn,
    kink_bound,
    lower_bound_search,
    monomial_bound,
    piece_bound,
    random_piece_counts,
    random_width_piece_counts,
    sup_error_vs_power,
    sup_error_vs_quadratic,
)
from core.exceptions import ConfigurationError, ContractViolation, UnsupportedGate
from core.tensor import Rng


def even_width_tuples(product):
    """Every tuple of even widths ≥ 2 whose product is `product`"""
    if product == 1:
        return [()]
    tuples = []
    for w in range(2, product + 1, 2):
        if product % w == 0:
            tuples.extend((w,) + rest for rest in even_width_tuples(product // w))
    return tuples


QUADRATIC_WIDTHS = [t for p in (2, 4, 8, 16, 32, 64) for t in even_width_tuples(p)]


def test_piecewise_affine_contracts():
    p = PiecewiseAffine1D.from_knots([0.0, 0.5, 1.0], [0.0, 0.25, 1.0])
    assert p.piece_count == 2
    assert p.is_convex()
    assert p(0.75) == pytest.approx(0.625)
    with pytest.raises(ContractViolation):
        PiecewiseAffine1D(0.0, 1.0, np.array([1.5]), np.array([0.0, 1.0]), 0.0)
    with pytest.raises(ContractViolation):
        PiecewiseAffine1D(0.0, 1.0, np.array([0.5]), np.array([1.0]), 0.0)


def test_exact_errors_against_powers():
    chord = PiecewiseAffine1D.from_knots([0.0, 1.0], [0.0, 1.0])
    assert sup_error_vs_quadratic(chord) == pytest.approx(0.25)
    # x - x³ peaks at 1/√3
    assert sup_error_vs_power(chord, 3) == pytest.approx(2.0 / (3.0 * np.sqrt(3.0)))


def test_pwa_matches_forward(rng):
    net = init_hycnn([6, 6, 6], 1, rng)
    pwa = pwa_of_network(net, (-3.0, 3.0))
    t = np.linspace(-3.0, 3.0, 2001)
    np.testing.assert_allclose(pwa(t), forward(net, t[:, None]), rtol=1e-9, atol=1e-9)
    assert pwa.is_convex(1e-9)


def test_pwa_rejects_smooth_gates(rng):
    with pytest.raises(UnsupportedGate):
        pwa_of_network(init_hycnn([4], 1, rng, gate=GateSpec.logsumexp(1.0)))
    with pytest.raises(ContractViolation):
        pwa_of_network(init_hycnn([4], 2, rng))


def test_quadratic_widths_cover_all_products():
    assert (2, 2) in QUADRATIC_WIDTHS and (64,) in QUADRATIC_WIDTHS and (2, 4, 8) in QUADRATIC_WIDTHS


@pytest.mark.parametrize("widths", QUADRATIC_WIDTHS, ids=str)
def test_quadratic_certificate_is_exact(widths):
    net, cert = build_quadratic_hycnn(list(widths))
    D = float(np.prod(widths))
    assert cert.passed
    assert cert.measured == pytest.approx(1.0 / (8.0 * D**2), abs=1e-12)
    assert net.widths == list(widths)


def test_quadratic_two_by_two_bound():
    _, cert = build_quadratic_hycnn([2, 2])
    assert cert.claimed_bound == 0.0078125
    assert cert.model_dump(by_alias=True)["pass"] is True


def test_positive_quadratic_stays_between_square_and_identity():
    net, cert = build_quadratic_hycnn([4, 2], positive=True)
    assert cert.passed
    x = np.linspace(0.0, 1.0, 1001)
    values = forward(net, x[:, None])
    assert np.all(values >= x**2 - 1e-12)
    assert np.all(values <= x + 1e-12)


def test_quadratic_rejects_odd_widths():
    with pytest.raises(ContractViolation):
        quadratic_net([3, 2])


@pytest.mark.parametrize("L", range(1, 11))
def test_width2_construction_is_exact(L):
    net, cert = build_quadratic_width2(L)
    assert net.widths == [2] * L
    assert cert.measured == pytest.approx(2.0 ** (-2 * L - 3), abs=1e-12)
    assert cert.passed


def test_monomial_digits():
    assert monomial_digits(2) == []
    assert monomial_digits(3) == [1]
    assert monomial_digits(5) == [1, 1]
    assert monomial_digits(8) == [0, 0]


def test_small_monomial():
    net, cert = build_monomial_hycnn(3, 1, 3, grid_points=10_001)
    assert cert.passed, cert
    assert cert.claimed_bound == monomial_bound(3, 1, 3)
    assert max(net.widths) == 3


@pytest.mark.slow
@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("L", [1, 2])
@pytest.mark.parametrize("m", [3, 5])
def test_monomial_bounds(n, L, m):
    _, cert = build_monomial_hycnn(n, L, m)
    assert cert.details["grid_error"] <= monomial_bound(n, L, m)
    assert cert.passed, cert


def test_monomial_contracts():
    with pytest.raises(ContractViolation):
        build_monomial_hycnn(3, 1, 4)
    with pytest.raises(ContractViolation):
        build_monomial_hycnn(1, 1, 3)


def test_multivariate_quadratic():
    assert best_multiquad_plan(2, 4, 5)[:2] == (2, 1)
    net, cert = build_multivariate_quadratic(2, 4, 5, samples=20_000)
    assert cert.passed, cert
    assert max(net.widths) == 5
    with pytest.raises(ContractViolation):
        best_multiquad_plan(10, 1, 3)


def test_piece_bound_and_floor():
    assert kink_bound([3, 2]) == 7
    assert piece_bound([3, 2]) == 8
    assert piece_bound([1]) == 2
    assert icnn_sup_floor([3, 2]) == pytest.approx(1.0 / (8 * 64))
    assert icnn_sup_floor([3, 2], input_dim=2) == pytest.approx(2.0 / (8 * 64))


@pytest.mark.parametrize("gate", [GateSpec.relu(), GateSpec.leaky_relu(0.2)], ids=["relu", "leaky"])
def test_random_icnns_respect_piece_bound(gate):
    reports = random_piece_counts([3, 2], range(100), gate)
    assert len(reports) == 100
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
    assert all(r.kinks <= 7 and r.pieces <= 8 for r in reports)


def test_single_neuron_icnn_has_two_pieces():
    net = init_icnn_hoedt([1], 1, Rng(0))
    net.layers[0].assign(1, W=[[1.0]], b=[0.0])
    net.out.assign(V=[[1.0]], W=[[0.0]], b=[0.0])
    pwa = pwa_of_network(net, (-1.0, 1.0))
    assert pwa.piece_count == 2
    assert pwa.piece_count - 1 <= kink_bound([1])


def test_random_width_icnns_respect_kink_bound():
    reports = random_width_piece_counts(200, Rng(7))
    assert len(reports) == 200
    assert {len(r.widths) for r in reports} <= {1, 2, 3, 4}
    assert max(max(r.widths) for r in reports) <= 6
    assert {r.gate for r in reports} == {"relu", "leaky_relu"}
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]
    assert all(r.pieces <= r.piece_bound for r in reports)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_lower_bound_search(k):
    report = lower_bound_search(k)
    assert abs(report.value - report.floor) <= 1e-3
    assert report.floor == pytest.approx(1.0 / (8 * k**2))
    assert len(report.breakpoints) == k - 1
    assert report.witness_error == pytest.approx(report.value, abs=1e-12)
    assert report.value >= report.floor - 1e-12
    assert report.candidates == math.comb(119, k - 1)


def test_lower_bound_prefers_equal_cells():
    report = lower_bound_search(2, resolution=10)
    assert report.breakpoints == [0.5]
    assert report.value == pytest.approx(1.0 / 32.0, abs=1e-15)
    uneven = envelope_error(*chebyshev_lines(np.array([[0.0, 0.3, 1.0]])))
    assert uneven[0] == pytest.approx(0.7**2 / 8.0, abs=1e-15)


def test_envelope_error_matches_exact_pwa():
    rng = Rng(11)
    for i in range(25):
        cuts = np.sort(rng.child("cuts", i).uniform(0.0, 1.0, 3))
        knots = np.concatenate([[0.0], cuts, [1.0]])
        slopes, intercepts = chebyshev_lines(knots)
        fast = envelope_error(slopes[None, :], intercepts[None, :])[0]
        exact = sup_error_vs_quadratic(envelope_pwa(slopes, intercepts))
        assert fast == pytest.approx(exact, abs=1e-12)
        assert fast >= 1.0 / (8.0 * 16) - 1e-12


def test_lower_bound_search_range():
    with pytest.raises(ContractViolation):
        lower_bound_search(6)


def test_diagonal_floor(rng):
    net = init_icnn_hoedt([6, 4], 3, rng)
    report = diagonal_floor_check(net)
    assert report.passed
    assert report.piece_bound == 15
    with pytest.raises(UnsupportedGate):
        diagonal_floor_check(init_hycnn([4], 3, rng))


def test_embedding_checks():
    report = embedding_checks(Rng(0), samples=1000)
    assert report.passed
    assert report.relu_network_width == 3 * 4 + 2 * 2
    assert max(report.icnn_relu_max_delta, report.icnn_leaky_max_delta, report.hycnn_to_relu_max_delta) <= 1e-12
    assert report.witness_beats_piece_budget >= 1


def test_embedding_contracts(rng):
    with pytest.raises(ContractViolation):
        icnn_to_hycnn(init_hycnn([4], 2, rng))
    with pytest.raises(UnsupportedGate):
        hycnn_to_relu(init_hycnn([4], 2, rng, gate=GateSpec.logsumexp(1.0)))


def test_build_construction_dispatch():
    net, cert = build_construction("quadratic", widths=[2, 2])
    assert cert.passed
    _, cert = build_construction("quadratic2", L=3)
    assert cert.widths == [2, 2, 2]
    with pytest.raises(ContractViolation):
        build_construction("quadratic")
    with pytest.raises(ConfigurationError):
        build_construction("cubic")


def test_homogenize_scales_with_trailing_input():
    square = quadratic_net([2, 2])
    scaled = homogenize(square)
    u = np.linspace(-0.5, 1.5, 21)
    for y in (0.0, 0.3, 2.0):
        X = np.column_stack([u * y, np.full_like(u, y)])
        np.testing.assert_allclose(forward(scaled, X), y * forward(square, u[:, None]), atol=1e-12)
    with pytest.raises(UnsupportedGate):
        homogenize(init_hycnn([4], 1, Rng(0), gate=GateSpec.logsumexp(1.0)))


def test_compose_evaluates_inner_then_outer():
    square = quadratic_net([2], positive=True)
    composed = compose_hycnn(square, homogenize(square))
    x = np.linspace(0.05, 1.0, 40)
    inner = forward(square, x[:, None])
    expected = x * forward(square, (inner / x)[:, None])
    np.testing.assert_allclose(forward(composed, x[:, None]), expected, atol=1e-12)
    with pytest.raises(ContractViolation):
        compose_hycnn(square, square)
