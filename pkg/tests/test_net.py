import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from convexity_lab.errors import InvalidInputError
from convexity_lab.linalg import spectral_norm
from convexity_lab.net import (Architecture, Dataset, Params, RegionKind, SwitchSignature, forward, forward_batch,
                               frozen_forward, init_params, region_classify, star_norm, switch_signature)


def test_architecture_validation():
    a = Architecture.parse("2,3,4,1")
    assert a.H == 2 and a.m == 2 * 3 + 3 * 4 + 4
    assert a.shapes == [(2, 3), (3, 4), (4, 1)]
    for bad in ("2,3,2", "2,1,1", "2,1", "x,2,1"):
        with pytest.raises(InvalidInputError):
            Architecture.parse(bad)


def test_params_immutable_and_arithmetic(rng):
    arch = Architecture.parse("3,4,1")
    W = init_params(arch, rng)
    with pytest.raises(ValueError):
        W.mats[0][0, 0] = 1.0
    V = W + 2.0 * W - W
    assert V.allclose(2 * W)
    assert math.isclose(W.norm_sq, float(np.sum(W.flat() ** 2)), rel_tol=1e-14)
    assert Params.from_flat(arch, W.flat()) == W
    with pytest.raises(InvalidInputError):
        Params([np.ones((3, 4)), np.ones((3, 1))])


def test_forward_fixture(t1):
    W, D = t1
    assert forward(D.inputs[0], W) == 1.5


def test_forward_zero_weights(rng):
    W = Params.zeros(Architecture.parse("3,4,4,1"))
    assert np.all(forward_batch(rng.standard_normal((5, 3)), W) == 0.0)


def test_forward_dead_unit():
    W = Params([np.diag([1.0, -1.0]), np.array([[0.0], [5.0]])])
    assert forward([1.0, 0.5], W) == 0.0


def test_signature_fixture(t1):
    W, D = t1
    sig = switch_signature(W, D, eps_b=1e-9)
    assert sig.bits[0].tolist() == [[True, True]]
    assert sig.bits[1].tolist() == [[True]]
    assert not sig.any_boundary


def test_signature_zero_weights(t1):
    _, D = t1
    sig = switch_signature(Params.zeros(Architecture.parse("2,2,1")), D)
    assert not any(b.any() for b in sig.bits)
    assert all(b.all() for b in sig.boundary)


def test_signature_dead_unit():
    W = Params([np.diag([1.0, -1.0]), np.ones((2, 1))])
    sig = switch_signature(W, Dataset([[1.0, 0.5]], [0.0]))
    assert sig.bits[0].tolist() == [[True, False]]


def test_frozen_forward(t1):
    W, D = t1
    sig = switch_signature(W, D).for_sample(0)
    assert frozen_forward(D.inputs[0], W, sig) == 1.5
    W2 = Params([np.eye(2), -np.ones((2, 1))])
    assert frozen_forward(D.inputs[0], W2, sig) == -1.5
    assert forward(D.inputs[0], W2) == 0.0
    off = SwitchSignature.constant(W.arch, 1, False)
    assert frozen_forward(D.inputs[0], W2, off) == 0.0


def test_region_classify_smooth(t1):
    W, D = t1
    assert region_classify(W, D).kind is RegionKind.SMOOTH_ANALYTIC


def test_region_classify_kink_with_live_input():
    W = Params([np.array([[1.0, 0.0], [-1.0, 0.0]]), np.ones((2, 1))])
    D = Dataset([[1.0, 1.0]], [0.0])
    rc = region_classify(W, D)
    assert rc.kind is RegionKind.POTENTIALLY_NONSMOOTH
    assert rc.witness == (0, 1, 0)


def test_region_classify_constant_when_layer_below_is_dead():
    # first hidden layer fully off, so later pre-activations are exactly zero but locally frozen
    W = Params([-np.ones((2, 3)), np.ones((3, 3)), np.ones((3, 1))])
    D = Dataset([[1.0, 2.0]], [0.0])
    rc = region_classify(W, D)
    assert rc.kind is RegionKind.SMOOTH_CONSTANT
    assert rc.witness == (0, 2, 0)


def test_region_classify_zero_input_is_constant():
    W = Params([np.ones((2, 2)), np.ones((2, 1))])
    D = Dataset([[0.0, 0.0]], [1.0], radius=1.0)
    assert region_classify(W, D).kind is RegionKind.SMOOTH_CONSTANT


def test_region_classify_zero_weights_deep_network():
    # at W = 0 the output is not locally constant: W_k = eps * I gives a positive output
    arch = Architecture.parse("2,2,2,1")
    D = Dataset([[1.0, 0.5]], [1.0])
    assert region_classify(Params.zeros(arch), D).kind is RegionKind.POTENTIALLY_NONSMOOTH
    eps = 1e-2
    Weps = Params([eps * np.eye(2), eps * np.eye(2), eps * np.ones((2, 1))])
    assert forward(D.inputs[0], Weps) > 0.0


def test_star_norm_values(t1):
    W, _ = t1
    assert math.isclose(star_norm(W), math.sqrt(2.0), rel_tol=1e-12)
    assert star_norm(Params([np.eye(3), np.eye(3), np.ones((3, 1)) / math.sqrt(3)])) == pytest.approx(1.0, rel=1e-12)
    assert star_norm(Params.zeros(Architecture.parse("2,3,1"))) == 0.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_spectral_norm_matches_svd(M):
    expected = float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0
    assert spectral_norm(M) == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_spectral_norm_deflated_start():
    # all-ones start is orthogonal to the top singular vector
    M = np.array([[1.0, -1.0], [0.0, 0.0]])
    assert spectral_norm(M) == pytest.approx(math.sqrt(2.0), rel=1e-10)


def test_dataset_radius_contract():
    D = Dataset([[3.0, 4.0], [0.0, 1.0]], [0, 1])
    assert D.radius == 5.0
    assert Dataset(D.inputs, D.labels, radius=7.0).radius == 7.0
    with pytest.raises(InvalidInputError):
        Dataset(D.inputs, D.labels, radius=4.0)
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    E = Dataset.empty(2, radius=1.0)
    assert E.N == 0 and E.weight == 0.0
    with pytest.raises(InvalidInputError):
        Dataset([[np.nan, 0.0]], [0.0])
