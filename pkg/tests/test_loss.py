import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexity_lab.errors import BoundaryWarning, InvalidInputError, ResourceError
from convexity_lab.linalg import min_eigenvalue
from convexity_lab.loss import (LossConfig, descend, directional_second, full_hessian, gradient, hvp, laplacian, loss,
                                reg_loss)
from convexity_lab.net import Architecture, Dataset, Params, init_params, random_direction, switch_signature

from helpers import fd_gradient, random_arch, random_data, smooth_point


def test_fixture_values(t1):
    W, D = t1
    assert loss(W, D) == 0.125
    assert W.norm_sq == 4.0
    assert reg_loss(W, D, 0.1) == pytest.approx(0.325, abs=1e-15)
    g = gradient(W, D, 0.1)
    np.testing.assert_allclose(g.mats[0], [[0.6, 0.5], [0.25, 0.35]], atol=1e-15)
    np.testing.assert_allclose(g.mats[1][:, 0], [0.6, 0.35], atol=1e-15)


def test_zero_weight_losses():
    arch = Architecture.parse("2,3,1")
    D0 = Dataset([[1.0, 2.0], [0.5, 0.1]], [0.0, 0.0])
    assert loss(Params.zeros(arch), D0) == 0.0
    D1 = Dataset([[1.0, 2.0]], [1.0])
    assert loss(Params.zeros(arch), D1) == 0.5
    assert reg_loss(Params.zeros(arch), D1, 3.0) == 0.5


def test_lambda_zero_is_plain_loss(rng):
    arch = Architecture.parse("3,4,1")
    D = random_data(rng, 3, 6)
    W = init_params(arch, rng)
    assert reg_loss(W, D, 0.0) == loss(W, D)


def test_dead_network_gradient(rng):
    arch = Architecture.parse("3,4,1")
    D = Dataset(np.abs(rng.standard_normal((5, 3))) + 0.1, rng.standard_normal(5))
    W = Params([-np.abs(rng.standard_normal((3, 4))), rng.standard_normal((4, 1))])
    assert gradient(W, D, 0.0, warn=False).norm == 0.0
    assert gradient(W, D, 0.3, warn=False).allclose(0.3 * W)


def test_interpolation_gradient_vanishes(rng):
    arch = Architecture.parse("3,4,1")
    W = init_params(arch, rng)
    X = rng.standard_normal((6, 3))
    from convexity_lab.net import forward_batch

    D = Dataset(X, forward_batch(X, W))
    assert gradient(W, D, 0.0).norm == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, max_width=5)
    D = random_data(rng, arch.widths[0], int(rng.integers(1, 10)))
    W = smooth_point(rng, arch, D, min_margin=1e-3)
    lam = float(rng.uniform(0, 1))
    sig = switch_signature(W, D)
    g = gradient(W, D, lam, warn=False).flat()
    fd = fd_gradient(lambda V: reg_loss(V, D, lam, sig), W, h=1e-6)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_hvp_matches_gradient_differences(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, max_width=5)
    D = random_data(rng, arch.widths[0], 6)
    W = init_params(arch, rng)
    sig = switch_signature(W, D)
    X = random_direction(arch, rng)
    h = 1e-5
    fd = (gradient(W + h * X, D, 0.2, sig=sig) - gradient(W - h * X, D, 0.2, sig=sig)) / (2 * h)
    Hx = hvp(W, D, 0.2, X, sig=sig)
    assert (Hx - fd).norm <= 1e-6 * max(1.0, Hx.norm)


def test_hvp_symmetric(rng):
    arch = Architecture.parse("3,4,3,1")
    D = random_data(rng, 3, 7)
    W = init_params(arch, rng)
    X, Y = random_direction(arch, rng), random_direction(arch, rng)
    assert X.dot(hvp(W, D, 0.1, Y)) == pytest.approx(Y.dot(hvp(W, D, 0.1, X)), rel=1e-12)


def test_hvp_zero_direction(t1):
    W, D = t1
    assert hvp(W, D, 0.1, Params.zeros(W.arch)).norm == 0.0
    assert directional_second(W, D, 0.1, Params.zeros(W.arch)) == 0.0


def test_bowl_limit(rng):
    arch = Architecture.parse("3,4,1")
    W = init_params(arch, rng)
    X = random_direction(arch, rng, unit=False)
    for D in (Dataset.empty(3), Dataset(np.zeros((4, 3)), np.zeros(4), radius=1.0)):
        assert hvp(W, D, 0.7, X).allclose(0.7 * X, rtol=1e-14)
        assert directional_second(W, D, 0.7, X) == pytest.approx(0.7 * X.norm_sq, rel=1e-14)
        np.testing.assert_allclose(full_hessian(W, D, 0.7), 0.7 * np.eye(arch.m), atol=1e-15)


def test_directional_second_matches_hvp_on_fixture(t1, rng):
    W, D = t1
    for _ in range(100):
        X = random_direction(W.arch, rng)
        a = X.dot(hvp(W, D, 0.1, X))
        b = directional_second(W, D, 0.1, X)
        assert a == pytest.approx(b, rel=1e-8, abs=1e-14)


def test_directional_second_single_coordinate(t1):
    W, D = t1
    X = Params([np.zeros((2, 2)), np.array([[1.0], [0.0]])])
    assert directional_second(W, D, 0.0, X) == pytest.approx(1.0, abs=1e-15)
    Hm = full_hessian(W, D, 0.0)
    j = 4  # flat index of the first output weight
    assert Hm[j, j] == pytest.approx(1.0, abs=1e-15)


def _pair_insertion_second(W, D, X, sig):
    """(1/N) sum_i (ydot_i^2 + e_i * yddot_i) with ydot, yddot from inserting X into one or two layers."""
    masks = sig.masks()
    H = W.H
    total = 0.0
    for i in range(D.N):
        a = D.inputs[i:i + 1]

        def run(choice):
            h = a
            for k in range(H + 1):
                M = X.mats[k] if k in choice else W.mats[k]
                h = (h @ M) * masks[k][i:i + 1]
            return float(h[0, 0])

        y = run(())
        ydot = sum(run((k,)) for k in range(H + 1))
        yddot = 2.0 * sum(run((j, k)) for j in range(H + 1) for k in range(j + 1, H + 1))
        total += ydot ** 2 + (y - D.labels[i]) * yddot
    return total / D.N


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_directional_second_pair_insertion(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, max_width=5, max_hidden=3)
    D = random_data(rng, arch.widths[0], 5)
    W = init_params(arch, rng)
    sig = switch_signature(W, D)
    X = random_direction(arch, rng)
    got = directional_second(W, D, 0.0, X, sig)
    assert got == pytest.approx(_pair_insertion_second(W, D, X, sig), rel=1e-10, abs=1e-12)


def test_full_hessian_times_vector(rng):
    arch = Architecture.parse("3,4,3,1")
    D = random_data(rng, 3, 8)
    W = init_params(arch, rng)
    Hm, asym = full_hessian(W, D, 0.05, return_asymmetry=True)
    assert asym < 1e-12
    X = random_direction(arch, rng)
    np.testing.assert_allclose(Hm @ X.flat(), hvp(W, D, 0.05, X).flat(), rtol=1e-8, atol=1e-12)


def test_full_hessian_cap():
    arch = Architecture.parse("10,10,1")
    D = Dataset(np.ones((1, 10)), [0.0])
    with pytest.raises(ResourceError):
        full_hessian(Params.zeros(arch), D, 0.1, cap=50)


def test_min_eigenvalue_examples(rng):
    assert min_eigenvalue(0.3 * np.eye(4)) == pytest.approx(0.3)
    assert min_eigenvalue(np.diag([3.0, -2.0, 5.0])) == pytest.approx(-2.0)
    with pytest.raises(InvalidInputError):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))
    # shifted power iteration oracle
    A = rng.standard_normal((10, 10))
    S = A + A.T
    shift = np.abs(S).sum(axis=1).max()
    v = np.ones(10) / math.sqrt(10)
    for _ in range(100000):
        w = (shift * np.eye(10) - S) @ v
        nv = w / np.linalg.norm(w)
        if np.linalg.norm(nv - v) < 1e-13:
            break
        v = nv
    oracle = shift - float(v @ ((shift * np.eye(10) - S) @ v))
    assert min_eigenvalue(S) == pytest.approx(oracle, abs=1e-6)


def test_laplacian_fixture(t1):
    W, D = t1
    assert laplacian(W, D) == pytest.approx(3.75, abs=1e-14)
    assert laplacian(Params.zeros(W.arch), D) == 0.0


def test_laplacian_is_hessian_trace(rng):
    for _ in range(10):
        arch = random_arch(rng, max_width=4, max_hidden=3)
        D = random_data(rng, arch.widths[0], 6)
        W = smooth_point(rng, arch, D)
        tr = float(np.trace(full_hessian(W, D, 0.0)))
        assert laplacian(W, D) == pytest.approx(tr, rel=1e-8, abs=1e-12)


def test_boundary_warning(t1):
    _, D = t1
    W = Params([np.array([[1.0, 0.0], [-2.0, 1.0]]), np.ones((2, 1))])
    with pytest.warns(BoundaryWarning):
        gradient(W, D, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gradient(W, D, 0.0, warn=False)


def test_descend_reaches_critical_point(rng):
    arch = Architecture.parse("3,4,1")
    D = random_data(rng, 3, 10)
    W0 = init_params(arch, rng)
    W, gn, conv = descend(W0, D, 0.1, sig_mode="linear", gtol=1e-9)
    assert conv and gn <= 1e-9
    assert reg_loss(W, D, LossConfig(0.1)) <= reg_loss(W0, D, 0.1)
    with pytest.raises(InvalidInputError):
        descend(W0, D, 0.1, sig_mode="tanh")
