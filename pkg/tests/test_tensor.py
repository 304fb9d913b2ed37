import math

import numpy as np
import pytest
import torch

from core.exceptions import ContractViolation
from core.tensor import (
    Rng,
    as_matrix,
    as_vector,
    logsumexp2,
    logsumexp2_t,
    matvec,
    sample_lognormal,
    softplus,
    softplus_inverse,
)


def test_rng_same_key_same_stream():
    a = Rng(7).child(3, "W1").normal(size=5)
    b = Rng(7).child(3, "W1").normal(size=5)
    np.testing.assert_array_equal(a, b)


def test_rng_child_ignores_sibling_draws():
    root = Rng(7)
    first = root.child("a").normal(size=3)
    root.child("b").normal(size=100)
    root.normal(size=10)
    again = root.child("a").normal(size=3)
    np.testing.assert_array_equal(first, again)


def test_rng_children_differ():
    root = Rng(7)
    assert not np.array_equal(root.child("a").normal(size=4), root.child("b").normal(size=4))
    assert not np.array_equal(Rng(7).normal(size=4), Rng(8).normal(size=4))


def test_rng_spawn_is_deterministic():
    first = [r.uniform(size=2) for r in Rng(3).spawn(3)]
    second = [r.uniform(size=2) for r in Rng(3).spawn(3)]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_rng_rejects_negative_seed():
    with pytest.raises(ContractViolation):
        Rng(-1)


def test_logsumexp2_values():
    assert logsumexp2(0.0, 0.0, 1.0) == pytest.approx(math.log(2.0))
    assert logsumexp2(1000.0, 0.0, 1.0) == pytest.approx(1000.0)
    # tau → 0 recovers the max
    assert logsumexp2(1.0, 3.0, 1e-6) == pytest.approx(3.0, abs=1e-9)


def test_logsumexp2_matches_torch_twin():
    a = np.array([-2.0, 0.5, 40.0])
    b = np.array([1.0, 0.5, -3.0])
    expected = logsumexp2(a, b, 0.7)
    got = logsumexp2_t(torch.as_tensor(a), torch.as_tensor(b), 0.7).numpy()
    np.testing.assert_allclose(got, expected, rtol=1e-14)


def test_logsumexp2_rejects_non_positive_tau():
    with pytest.raises(ContractViolation):
        logsumexp2(0.0, 1.0, 0.0)


@pytest.mark.parametrize("x", [-30.0, -5.0, 0.0, 0.5, 20.0])
def test_softplus_inverse(x):
    assert softplus_inverse(softplus(x)) == pytest.approx(x, rel=1e-10, abs=1e-10)


def test_softplus_inverse_domain():
    with pytest.raises(ContractViolation):
        softplus_inverse(0.0)


def test_as_matrix_contracts():
    M = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert M.dtype == np.float64
    assert not M.flags.writeable
    with pytest.raises(ContractViolation):
        as_matrix([1.0, 2.0])
    with pytest.raises(ContractViolation):
        as_matrix([[1.0, float("nan")]])
    assert np.isinf(as_matrix([[np.inf]], allow_nonfinite=True)[0, 0])


def test_as_vector_and_matvec():
    v = as_vector([1.0, -1.0])
    np.testing.assert_array_equal(matvec([[1.0, 2.0], [3.0, 4.0]], v), [-1.0, -1.0])
    with pytest.raises(ContractViolation):
        matvec([[1.0, 2.0, 3.0]], v)
    with pytest.raises(ContractViolation):
        as_vector([[1.0]])


def test_sample_lognormal_moments():
    values = sample_lognormal(Rng(0), 0.5, 0.1, 200_000)
    assert values.min() > 0
    assert values.mean() == pytest.approx(0.5, abs=0.01)
    assert values.var() == pytest.approx(0.1, rel=0.05)
