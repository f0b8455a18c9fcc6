"""Numpy reference kernels for batched ReLU networks with frozen switches.

Conventions shared with the compiled backend:

* ``A`` is the ``(N, n0)`` input batch, ``Ws[k]`` has shape ``(n_k, n_{k+1})``.
* ``masks[k]`` is the ``(N, n_{k+1})`` 0/1 switch pattern of layer ``k+1``
  (the output switch is ``masks[-1]``), stored as float64.
* ``hs[0] = A`` and ``hs[k+1] = (hs[k] @ Ws[k]) * masks[k]``; the network
  output is ``hs[-1][:, 0]``.
"""
import numpy as np

BACKEND = "python"


def forward(A, Ws):
    """True ReLU forward pass. Returns ``(hs, zs)`` with pre-activations ``zs``."""
    hs = [A]
    zs = []
    h = A
    for W in Ws:
        z = h @ W
        zs.append(z)
        h = np.maximum(z, 0.0)
        hs.append(h)
    return hs, zs


def frozen_forward(A, Ws, masks):
    hs = [A]
    h = A
    for W, M in zip(Ws, masks):
        h = (h @ W) * M
        hs.append(h)
    return hs


def backprop(hs, Ws, masks, dy):
    """Gradient of ``sum_i L_i(y_i)`` given ``dy[i] = L_i'(y_i)``."""
    H = len(Ws) - 1
    grads = [None] * (H + 1)
    delta = dy[:, None] * masks[H]
    for k in range(H, -1, -1):
        grads[k] = hs[k].T @ delta
        if k:
            delta = (delta @ Ws[k].T) * masks[k - 1]
    return grads


def hvp(hs, Ws, masks, dy, Xs, curv):
    """Hessian of ``sum_i L_i(y_i)`` on the frozen piece applied to ``Xs``.

    ``curv`` is the common second derivative ``L_i''`` (``1/N`` for the
    halved mean-square loss). Forward-over-reverse.
    """
    H = len(Ws) - 1
    hdots = [np.zeros_like(hs[0])]
    hd = hdots[0]
    for k in range(H + 1):
        hd = (hd @ Ws[k] + hs[k] @ Xs[k]) * masks[k]
        hdots.append(hd)
    ydot = hd[:, 0]
    out = [None] * (H + 1)
    delta = dy[:, None] * masks[H]
    ddelta = (curv * ydot)[:, None] * masks[H]
    for k in range(H, -1, -1):
        out[k] = hdots[k].T @ delta + hs[k].T @ ddelta
        if k:
            ddelta = (ddelta @ Ws[k].T + delta @ Xs[k].T) * masks[k - 1]
            delta = (delta @ Ws[k].T) * masks[k - 1]
    return out


def jet2(hs, Ws, masks, Xs):
    """First and second ``t``-derivatives at 0 of the frozen output along ``W + tX``."""
    hd = np.zeros_like(hs[0])
    hdd = np.zeros_like(hs[0])
    for k in range(len(Ws)):
        hdd = (hdd @ Ws[k] + 2.0 * (hd @ Xs[k])) * masks[k]
        hd = (hd @ Ws[k] + hs[k] @ Xs[k]) * masks[k]
    return hd[:, 0].copy(), hdd[:, 0].copy()


def sq_jacobian_rows(hs, Ws, masks):
    """Per-sample ``sum_w (d y_i / d w)^2`` on the frozen piece."""
    H = len(Ws) - 1
    total = np.zeros(hs[0].shape[0])
    g = masks[H].copy()
    for k in range(H, -1, -1):
        total += np.einsum("ij,ij->i", hs[k], hs[k]) * np.einsum("ij,ij->i", g, g)
        if k:
            g = (g @ Ws[k].T) * masks[k - 1]
    return total
