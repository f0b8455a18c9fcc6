"""Independent oracles shared by the test modules."""
import numpy as np

from convexity_lab.net import Architecture, Dataset, Params, init_params, pre_activations


def random_arch(rng, max_width=8, max_hidden=2, n0=None):
    H = int(rng.integers(1, max_hidden + 1))
    n0 = int(rng.integers(1, max_width + 1)) if n0 is None else n0
    hidden = [int(rng.integers(2, max_width + 1)) for _ in range(H)]
    return Architecture((n0, *hidden, 1))


def random_data(rng, n0, N, radius=None):
    X = rng.standard_normal((N, n0))
    y = rng.standard_normal(N)
    return Dataset(X, y, radius=radius)


def fd_gradient(f, W: Params, h=1e-6):
    """Central differences of a scalar function of the weights, one coordinate at a time."""
    v = W.flat()
    g = np.empty_like(v)
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = h
        g[j] = (f(Params.from_flat(W.arch, v + e)) - f(Params.from_flat(W.arch, v - e))) / (2 * h)
    return g


def margin_of(W, D):
    """Smallest |pre-activation| over samples whose layer input is not identically zero.

    A row fed by an all-zero layer stays exactly zero under any small
    perturbation, so it is smooth regardless of its value.
    """
    zs = pre_activations(W, D.inputs)
    best = np.inf
    prev = D.inputs
    for z in zs:
        live = np.any(prev != 0.0, axis=1)
        if live.any():
            best = min(best, float(np.min(np.abs(z[live]))))
        prev = np.maximum(z, 0.0)
    return best


def smooth_point(rng, arch, D, min_margin=1e-3, scale=1.0, tries=200):
    """Random weights whose pre-activations all stay at least ``min_margin`` from zero."""
    for _ in range(tries):
        W = init_params(arch, rng, scale=scale)
        if margin_of(W, D) >= min_margin:
            return W
    raise RuntimeError("no smooth point found")
