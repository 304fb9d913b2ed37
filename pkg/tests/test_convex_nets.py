import json
import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from apps.convex_nets.models import ConvexNet, apply_gate, gate_weights
from apps.convex_nets.schemas import Arch, GateKind, GateSpec, WeightStyle
from apps.convex_nets.services import (
    build_net,
    check_convexity,
    estimate_gaussian_max_moments,
    forward,
    from_document,
    gaussian_max_moments,
    init_diagnostics,
    init_hycnn,
    init_icnn_hoedt,
    icnn_as_hycnn,
    input_gradient,
    load_net,
    restrict_to_line,
    save_net,
    to_document,
)
from core.exceptions import ConfigurationError, ContractViolation
from core.tensor import Rng

CONVEX_NETS = [
    (Arch.HYCNN, GateSpec.max()),
    (Arch.HYCNN, GateSpec.logsumexp(0.5)),
    (Arch.GROUPMAX, GateSpec.max()),
    (Arch.ICNN, GateSpec.relu()),
    (Arch.ICNN, GateSpec.leaky_relu(0.2)),
    (Arch.ICNNQ, GateSpec.relu()),
    (Arch.ICNNQ, GateSpec.softplus(1.0)),
]


def test_gate_spec_validation():
    with pytest.raises(ValidationError):
        GateSpec(kind=GateKind.LOGSUMEXP)
    with pytest.raises(ValidationError):
        GateSpec(kind=GateKind.LEAKY_RELU, alpha=1.5)
    assert GateSpec.from_name("softplus").tau == 1.0
    assert GateSpec.from_name("leaky_relu").alpha == 0.2
    assert GateSpec.max().with_tau(3.0) == GateSpec.max()
    assert GateSpec.logsumexp(1.0).with_tau(3.0).tau == 3.0


def test_single_lane_archs_reject_two_lane_gates():
    with pytest.raises(ContractViolation):
        ConvexNet(Arch.ICNN, 2, [4], GateSpec.max())
    with pytest.raises(ContractViolation):
        ConvexNet(Arch.HYCNN, 2, [], GateSpec.max())


def test_max_gate_ties_route_to_first_lane():
    a = torch.tensor([1.0, 2.0], dtype=torch.float64)
    b = torch.tensor([1.0, 3.0], dtype=torch.float64)
    np.testing.assert_array_equal(apply_gate(GateSpec.max(), a, b).numpy(), [1.0, 3.0])
    np.testing.assert_array_equal(gate_weights(GateSpec.max(), a, b).numpy(), [1.0, 0.0])


@pytest.mark.parametrize("arch,gate", CONVEX_NETS)
def test_initialized_nets_are_convex(arch, gate):
    net = build_net(arch, 3, [8, 8, 8], gate, Rng(5))
    report = check_convexity(net, Rng(6), trials=10_000)
    assert report.passed, report


def test_forward_single_and_batch_agree(rng):
    net = init_hycnn([6, 6], 3, rng)
    X = rng.child("x").normal(size=(4, 3))
    batch = forward(net, X)
    assert batch.shape == (4,)
    assert forward(net, X[2]) == pytest.approx(batch[2], rel=1e-12)
    with pytest.raises(ContractViolation):
        forward(net, np.zeros((2, 5)))


def test_input_gradient_of_smooth_net_matches_differences(rng):
    net = init_hycnn([5, 5], 2, rng, gate=GateSpec.logsumexp(0.8))
    x = np.array([0.3, -0.7])
    h = 1e-6
    numeric = [(forward(net, x + h * e) - forward(net, x - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(input_gradient(net, x), numeric, rtol=1e-6, atol=1e-9)


def test_reparametrized_weights_stay_positive(rng):
    net = init_hycnn([4, 4], 2, rng)
    with torch.no_grad():
        net.layers[1].V1_raw.fill_(-50.0)
    assert bool((net.layers[1].V(1) > 0).all())


def test_unreparametrized_net_rejects_negative_weights():
    net = ConvexNet(Arch.HYCNN, 1, [2, 2], GateSpec.max(), reparam=False)
    with pytest.raises(ContractViolation):
        net.layers[1].assign(1, V=-np.ones((2, 2)))


def test_groupmax_has_no_deep_skip(rng):
    net = init_hycnn([4, 4], 2, rng, arch=Arch.GROUPMAX)
    assert not net.layers[1].skip
    with pytest.raises(ContractViolation):
        net.layers[1].assign(1, W=np.ones((4, 2)))


def test_init_hycnn_bias_and_first_layer_correlation():
    with pytest.raises(ContractViolation):
        init_hycnn([4], 2, Rng(0), first_layer_correlation=1.0)
    net = init_hycnn([64, 64], 400, Rng(0), first_layer_correlation=0.0)
    W1 = net.layers[0].W(1).detach().numpy()
    assert W1.var() == pytest.approx(1.0 / 400, rel=0.05)
    b = net.layers[1].b(1).detach().numpy()
    assert np.allclose(b, -math.sqrt(64 / (2 * math.pi * 64 + 2 * math.pi - 2)))


def test_document_round_trip_is_exact(rng, tmp_path):
    net = init_hycnn([4, 3], 2, rng, gate=GateSpec.logsumexp(0.5))
    doc = json.loads(json.dumps(to_document(net, {"epoch": 3})))
    restored = from_document(doc)
    X = rng.child("x").normal(size=(20, 2))
    np.testing.assert_array_equal(forward(restored, X), forward(net, X))

    path = save_net(net, tmp_path / "nets" / "net.json", metadata={"epoch": 3})
    assert json.loads(path.read_text())["metadata"] == {"epoch": 3}
    np.testing.assert_array_equal(forward(load_net(path), X), forward(net, X))


def test_document_with_quadratic_layer(rng):
    net = init_icnn_hoedt([4, 4], 2, rng, gate=GateSpec.softplus(1.0), quadratic=True)
    X = rng.child("x").normal(size=(10, 2))
    np.testing.assert_array_equal(forward(from_document(to_document(net)), X), forward(net, X))


def test_load_net_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_net(tmp_path / "missing.json")
    with pytest.raises(ConfigurationError):
        from_document({"arch": "spline"})


def test_gaussian_critic_is_unconstrained(rng):
    net = init_icnn_hoedt([8, 8], 2, rng, WeightStyle.GAUSSIAN, gate=GateSpec.softplus(1.0))
    assert not net.nonneg and not net.reparam


def test_restrict_to_line(rng):
    net = init_hycnn([5, 5], 3, rng)
    u = np.array([1.0, -2.0, 0.5])
    o = np.array([0.1, 0.2, -0.3])
    line = restrict_to_line(net, u, o)
    t = np.linspace(-2.0, 2.0, 11)
    expected = forward(net, o + t[:, None] * u)
    np.testing.assert_allclose(forward(line, t[:, None]), expected, rtol=1e-12, atol=1e-12)
    with pytest.raises(ContractViolation):
        restrict_to_line(net, [1.0, 0.0])


def test_gaussian_max_closed_form():
    moments = gaussian_max_moments(1.0, 0.5)
    assert moments["mean"] == pytest.approx(math.sqrt(1.0 / (2.0 * math.pi)))
    assert moments["second"] == 1.0
    assert moments["cross"] == pytest.approx(0.5 + 1.0 / (2.0 * math.pi))


def test_gaussian_max_monte_carlo():
    exact = gaussian_max_moments(1.0, 0.5)
    estimate = estimate_gaussian_max_moments(Rng(0), 1.0, 0.5, n=1_000_000)
    for name in ("mean", "second", "cross"):
        assert abs(estimate[name] - exact[name]) <= 3.0 * estimate[f"{name}_se"], name


def test_init_diagnostics_first_layer():
    rows = init_diagnostics(depth=2, width=16, input_dim=50, seeds=range(20), batch=64)
    assert [row.layer for row in rows] == [1, 2]
    assert 0.7 <= rows[0].second_moment <= 1.3
    assert 0.3 <= rows[0].cross_moment <= 0.7


@pytest.mark.slow
def test_init_diagnostics_fixed_point():
    rows = init_diagnostics(depth=16, width=48, input_dim=50, seeds=range(100), batch=64)
    for row in rows:
        assert 0.7 <= row.second_moment <= 1.3, row
        assert 0.3 <= row.cross_moment <= 0.7, row


def icnn_reference_forward(net, x):
    """z₁ = σ(W₀x + b₀), z_{ℓ+1} = σ(V_ℓ z_ℓ + W_ℓ x + b_ℓ), f = V_L z_L + W_L x + b_L, lane 1 only"""
    act = torch.relu if net.gate.kind == GateKind.RELU else (lambda a: torch.where(a >= 0, a, net.gate.alpha * a))
    z = None
    for layer in net.layers:
        a = x @ layer.W(1).T + layer.b(1)
        if z is not None:
            a = a + z @ layer.V(1).T
        z = act(a)
    return (x @ net.out.W.T + net.out.b + z @ net.out.V_eff.T).squeeze(-1)


@pytest.mark.parametrize("gate", [GateSpec.relu(), GateSpec.leaky_relu(0.2)], ids=["relu", "leaky"])
def test_single_gate_hycnn_is_bit_identical_to_icnn(rng, gate):
    icnn = init_icnn_hoedt([16, 16, 8], 3, rng.child("net"), gate=gate)
    hycnn = icnn_as_hycnn(icnn)
    assert hycnn.arch == Arch.HYCNN and hycnn.gate == gate
    assert all(layer.lanes == 1 for layer in hycnn.layers)
    X = rng.child("x").uniform(-5.0, 5.0, (1000, 3))
    with torch.no_grad():
        expected = icnn_reference_forward(icnn, torch.as_tensor(X, dtype=torch.float64)).numpy()
    np.testing.assert_array_equal(forward(hycnn, X), expected)
    np.testing.assert_array_equal(forward(icnn, X), expected)


def test_single_gate_embedding_needs_an_icnn(rng):
    with pytest.raises(ContractViolation):
        icnn_as_hycnn(init_hycnn([4], 2, rng))
