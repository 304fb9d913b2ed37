import numpy as np
import pytest
import torch
from scipy.optimize import minimize

from apps.convex_nets.models import ConvexNet
from apps.convex_nets.schemas import Arch, GateSpec, WeightStyle
from apps.convex_nets.services import init_hycnn, init_icnn_hoedt, to_document
from apps.ot_learn.models import Checkpoint, CloudRole, PointCloud, QuadraticPotential
from apps.ot_learn.schemas import OTConfig
from apps.ot_learn.services import (
    checkpoint_select,
    critic_loss,
    cvx_penalty,
    icnn_baseline_train,
    map_mse,
    pushforward,
    read_cloud,
    saddle_train,
    write_map,
)
from apps.ot_learn.sinkhorn import (
    EntropicMapEstimator,
    barycentric_map,
    cost_matrix,
    sinkhorn,
    sinkhorn_divergence,
)
from apps.training.schemas import ConstantSchedule, CosineSchedule
from apps.training.services import trainable
from core.exceptions import ConfigurationError, ContractViolation, UnsupportedGate
from core.tensor import Rng


def cloud(rng, n, d=2, shift=0.0, role=CloudRole.SOURCE):
    return PointCloud(rng.normal(size=(n, d)) + shift, role)


# ---------------------------------------------------------------- Sinkhorn


def test_point_cloud_contracts():
    with pytest.raises(ContractViolation):
        PointCloud(np.zeros((0, 2)))
    with pytest.raises(ContractViolation):
        PointCloud(np.zeros(3))
    c = PointCloud(np.ones((4, 3)), CloudRole.TARGET)
    assert (c.n, c.dim) == (4, 3)
    np.testing.assert_allclose(c.weights, 0.25)


def test_sinkhorn_singletons():
    assert sinkhorn([[0.0, 0.0]], [[0.0, 0.0]], 0.01).value == pytest.approx(0.0, abs=1e-12)
    result = sinkhorn([[0.0, 0.0]], [[1.0, 0.0]], 0.01)
    assert result.value == pytest.approx(0.5, abs=1e-3)
    assert result.converged


def test_sinkhorn_contracts():
    with pytest.raises(ContractViolation):
        sinkhorn([[0.0]], [[1.0]], 0.0)
    with pytest.raises(ContractViolation):
        cost_matrix(np.zeros((2, 2)), np.zeros((2, 3)))


def test_sinkhorn_divergence_identical_clouds_is_zero(rng):
    X = cloud(rng, 20)
    assert sinkhorn_divergence(X, X, 0.1) == 0.0


def test_sinkhorn_divergence_is_symmetric(rng):
    X = cloud(rng.child("a"), 15)
    Y = cloud(rng.child("b"), 12, shift=1.0)
    forward = sinkhorn_divergence(X, Y, 0.5)
    assert forward == sinkhorn_divergence(Y, X, 0.5)
    assert forward > 0


def entropic_primal_oracle(X, Y, eps):
    """min ⟨C, π⟩ + ε·KL(π ‖ a⊗b) over couplings, solved as a generic convex program"""
    C = cost_matrix(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
    n, m = C.shape
    ab = np.full((n, m), 1.0 / (n * m))

    def objective(p):
        P = p.reshape(n, m)
        return float(np.sum(C * P) + eps * np.sum(P * np.log(P / ab)))

    def gradient(p):
        P = p.reshape(n, m)
        return (C + eps * (np.log(P / ab) + 1.0)).ravel()

    constraints = [{"type": "eq", "fun": lambda p, i=i: p.reshape(n, m)[i].sum() - 1.0 / n} for i in range(n)]
    # the last column constraint is implied by the others
    constraints += [{"type": "eq", "fun": lambda p, j=j: p.reshape(n, m)[:, j].sum() - 1.0 / m} for j in range(m - 1)]
    result = minimize(
        objective,
        ab.ravel(),
        jac=gradient,
        method="SLSQP",
        bounds=[(1e-12, 1.0)] * (n * m),
        constraints=constraints,
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    return result.fun


def test_sinkhorn_matches_convex_program():
    X = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]
    Y = [[1.0, 1.0], [2.0, 0.0], [0.0, -1.0]]
    value = sinkhorn(X, Y, 10.0, max_iter=10_000, tol=1e-13).value
    assert value == pytest.approx(entropic_primal_oracle(X, Y, 10.0), abs=1e-6)


def test_barycentric_map_single_target():
    target = np.array([[3.0, -1.0]])
    np.testing.assert_array_equal(barycentric_map([0.5, 0.5], target, np.zeros(1), 0.1), [3.0, -1.0])


def test_barycentric_map_large_eps_is_target_mean(rng):
    Y = rng.normal(size=(10, 2))
    mapped = barycentric_map(rng.child("q").normal(size=(4, 2)), Y, np.zeros(10), 1e8)
    np.testing.assert_allclose(mapped, np.tile(Y.mean(axis=0), (4, 1)), atol=1e-6)


def test_entropic_map_estimator(rng):
    src = cloud(rng.child("src"), 60)
    tgt = PointCloud(src.X + np.array([2.0, 0.0]), CloudRole.TARGET)
    with pytest.raises(ContractViolation):
        EntropicMapEstimator(eps=0.1).predict(src.X)
    estimator = EntropicMapEstimator(eps=0.1).fit(src, tgt)
    mapped = estimator.predict(src.X)
    assert mapped.shape == (60, 2)
    # the shift dominates any entropic blur
    assert np.mean(mapped[:, 0] - src.X[:, 0]) == pytest.approx(2.0, abs=0.3)


# ---------------------------------------------------------------- objectives


def test_cvx_penalty_counts_negative_weights():
    net = ConvexNet(Arch.ICNN, 1, [2], GateSpec.relu(), reparam=False, nonneg=False)
    net.out.assign(V=[[-1.0, 2.0]])
    assert float(cvx_penalty(net)) == 1.0


def test_cvx_penalty_covers_hidden_and_output_weights_only():
    net = ConvexNet(Arch.ICNN, 1, [2, 2], GateSpec.relu(), reparam=False, nonneg=False)
    net.layers[0].assign(1, W=[[-5.0], [-5.0]])
    net.layers[1].assign(1, V=[[-1.0, 0.0], [0.0, -2.0]], W=[[-5.0], [-5.0]])
    net.out.assign(V=[[-3.0, 1.0]], W=[[-5.0]])
    assert float(cvx_penalty(net)) == 14.0


def test_critic_loss_gradient_matches_finite_differences():
    f = init_hycnn([4, 4], 2, Rng(0).child("f"), gate=GateSpec.logsumexp(1.0))
    g = init_icnn_hoedt([4, 4], 2, Rng(0).child("g"), WeightStyle.GAUSSIAN, gate=GateSpec.softplus(1.0))
    X = Rng(1).normal(size=(5, 2))
    Y = Rng(2).normal(size=(5, 2))
    for net in (f, g):
        params = trainable(net)
        loss = critic_loss(f, g, X, Y, lambda_cvx=0.5)
        analytic = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        h = 1e-6
        for (name, p), grad in zip(params.items(), analytic):
            grad = torch.zeros_like(p) if grad is None else grad
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + h
                up = float(critic_loss(f, g, X, Y, lambda_cvx=0.5))
                flat[i] = original - h
                down = float(critic_loss(f, g, X, Y, lambda_cvx=0.5))
                flat[i] = original
                assert float(grad.view(-1)[i]) == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7), name


def test_quadratic_potential_pushforward(rng):
    X = rng.normal(size=(8, 3))
    np.testing.assert_allclose(pushforward(QuadraticPotential(3, 2.0), X), 2.0 * X)
    assert map_mse(QuadraticPotential(3), X, X) == pytest.approx(0.0, abs=1e-24)


# ---------------------------------------------------------------- saddle training


def smooth_pair(seed=0, d=2):
    gate = GateSpec.logsumexp(1.0)
    return init_hycnn([8, 8], d, Rng(seed).child("f"), gate=gate), init_hycnn([8, 8], d, Rng(seed).child("g"), gate=gate)


def test_default_learning_rate_decays_over_outer_iterations():
    config = OTConfig(outer_T=200)
    assert isinstance(config.lr, CosineSchedule)
    assert config.lr.T == 200
    assert config.lr.at(0) == pytest.approx(1e-2)
    assert config.lr.at(200) == pytest.approx(1e-4)
    assert OTConfig(outer_T=0).lr.T == 1
    assert OTConfig.model_validate({"lr": {"kind": "constant", "v": 0.5}}).lr == ConstantSchedule(v=0.5)


def small_config(**kwargs):
    defaults = dict(outer_T=3, inner_S=2, batch_M=16, lr=ConstantSchedule(v=1e-3))
    defaults.update(kwargs)
    return OTConfig(**defaults)


def test_zero_outer_iterations_leave_nets_unchanged(rng):
    f, g = smooth_pair()
    before = (to_document(f), to_document(g))
    result = saddle_train(f, g, cloud(rng.child("s"), 32), cloud(rng.child("t"), 32), small_config(outer_T=0))
    assert result.trace == [] and result.checkpoints == []
    assert (to_document(f), to_document(g)) == before


def test_saddle_train_rejects_max_gates(rng):
    f = init_hycnn([4], 2, Rng(0))
    _, g = smooth_pair()
    with pytest.raises(UnsupportedGate):
        saddle_train(f, g, cloud(rng, 32), cloud(rng, 32), small_config())
    with pytest.raises(UnsupportedGate):
        icnn_baseline_train(f, g, cloud(rng, 32), cloud(rng, 32), small_config())


def test_saddle_train_contracts(rng):
    f, g = smooth_pair()
    with pytest.raises(ContractViolation):
        saddle_train(f, g, cloud(rng, 8), cloud(rng, 32), small_config())
    with pytest.raises(ContractViolation):
        saddle_train(f, g, cloud(rng, 32, d=3), cloud(rng, 32, d=3), small_config())
    with pytest.raises(ContractViolation):
        saddle_train(f, QuadraticPotential(2), cloud(rng, 32), cloud(rng, 32), small_config())


def test_saddle_train_is_deterministic():
    src = cloud(Rng(5).child("s"), 64)
    tgt = cloud(Rng(5).child("t"), 64, shift=1.0)
    runs = []
    for _ in range(2):
        f, g = smooth_pair()
        runs.append(saddle_train(f, g, src, tgt, small_config(seed=3)))
    assert [r.objective for r in runs[0].trace] == [r.objective for r in runs[1].trace]
    assert [r.outer_iter for r in runs[0].trace] == [1, 2, 3]
    assert all(np.isfinite(r.objective) for r in runs[0].trace)


def test_saddle_train_checkpoints_and_validation(rng):
    f, g = smooth_pair()
    src, tgt = cloud(rng.child("s"), 64), cloud(rng.child("t"), 64)
    validation = (cloud(rng.child("vs"), 40), cloud(rng.child("vt"), 40))
    config = small_config(outer_T=4, checkpoint_every=2, eval_every=2)
    result = saddle_train(f, g, src, tgt, config, validation=validation)
    assert [c.outer_iter for c in result.checkpoints] == [2, 4]
    assert result.checkpoints[0].f is not f
    assert [r.val_sinkhorn is not None for r in result.trace] == [False, True, False, True]


def test_frozen_quadratic_potential(rng):
    f = QuadraticPotential(2)
    _, g = smooth_pair()
    result = saddle_train(f, g, cloud(rng.child("s"), 64), cloud(rng.child("t"), 64), small_config(outer_T=5))
    assert len(result.trace) == 5
    assert result.f.scale == 1.0


def test_icnn_baseline_runs_with_gaussian_critic(rng):
    f = init_icnn_hoedt([8, 8], 2, Rng(0).child("f"), gate=GateSpec.softplus(1.0), quadratic=True)
    g = init_icnn_hoedt([8, 8], 2, Rng(0).child("g"), WeightStyle.GAUSSIAN, gate=GateSpec.softplus(1.0), quadratic=True)
    result = icnn_baseline_train(f, g, cloud(rng.child("s"), 64), cloud(rng.child("t"), 64), small_config())
    assert len(result.trace) == 3


@pytest.mark.slow
def test_identity_map_is_learned():
    src = cloud(Rng(0).child("s"), 2000)
    tgt = PointCloud(Rng(0).child("t").normal(size=(2000, 2)), CloudRole.TARGET)
    f, g = smooth_pair()
    config = OTConfig(outer_T=500, inner_S=5, batch_M=256, lr=ConstantSchedule(v=1e-3), seed=0)
    result = saddle_train(f, g, src, tgt, config)
    X = Rng(1).normal(size=(1000, 2))
    assert map_mse(result.f, X, X) < 0.5


# ---------------------------------------------------------------- checkpoint selection


def test_checkpoint_select(rng):
    X = rng.normal(size=(50, 2))
    val_src, val_tgt = PointCloud(X), PointCloud(X, CloudRole.VALIDATION)
    g = QuadraticPotential(2)
    checkpoints = [Checkpoint(outer_iter=10 * (i + 1), f=QuadraticPotential(2, s), g=g) for i, s in enumerate([0.5, 1.0, 2.0])]
    report = checkpoint_select(checkpoints, val_src, val_tgt, K=1)
    assert report.indices == [1]
    assert report.outer_iters == [20]
    assert report.val_scores[0] == pytest.approx(0.0, abs=1e-12)
    assert report.test_metric == report.val_scores[0]

    both = checkpoint_select(checkpoints, val_src, val_tgt, K=3, test_src=val_src, test_tgt=val_tgt)
    assert sorted(both.indices) == [0, 1, 2]
    assert both.val_scores == sorted(both.val_scores)
    with pytest.raises(ContractViolation):
        checkpoint_select(checkpoints, val_src, val_tgt, K=4)
    with pytest.raises(ContractViolation):
        checkpoint_select(checkpoints, val_src, val_tgt, K=0)


# ---------------------------------------------------------------- files


def test_map_file_round_trip(tmp_path, rng):
    X = rng.normal(size=(5, 2))
    path = write_map(tmp_path / "maps" / "map.csv", X, 2.0 * X)
    assert path.read_text().splitlines()[0] == "x1,x2,t1,t2"
    loaded = read_cloud(path, CloudRole.TEST)
    np.testing.assert_array_equal(loaded.X, np.hstack([X, 2.0 * X]))
    assert loaded.role == CloudRole.TEST
    with pytest.raises(ConfigurationError):
        read_cloud(tmp_path / "missing.csv")
