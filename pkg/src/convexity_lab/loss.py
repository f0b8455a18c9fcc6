"""Training loss, weight-decay loss and their derivatives on frozen pieces.

Every derivative here is taken with the switches held at a fixed pattern:
by default the pattern of ``W`` itself (the ``1_{x>0}`` convention at exact
zeros), or an explicit ``sig`` such as the all-on pattern of a linear net.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.optimize

from . import kernels
from .errors import BoundaryWarning, InvalidInputError, ResourceError
from .linalg import min_eigenpair, min_eigenvalue  # noqa: F401  (re-exported)
from .net import Dataset, Params, SwitchSignature

HESSIAN_CAP = 4096


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0

    def __post_init__(self):
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise InvalidInputError(f"weight decay must be finite and >= 0, got {self.lam}")


def _as_cfg(cfg) -> LossConfig:
    if isinstance(cfg, LossConfig):
        return cfg
    return LossConfig(float(cfg))


class Piece:
    """Forward state of ``W`` on ``D`` with switches fixed at ``sig``."""

    __slots__ = ("W", "D", "masks", "hs", "resid", "sig")

    def __init__(self, W: Params, D: Dataset, sig: Optional[SwitchSignature] = None, warn: bool = False):
        if W.mats[0].shape[0] != D.n0:
            raise InvalidInputError(f"input dimension {D.n0} does not match first layer {W.mats[0].shape}")
        self.W = W
        self.D = D
        self.sig = sig
        if sig is None:
            hs, zs = kernels.forward(D.inputs, W.mats)
            self.masks = [(z > 0.0).astype(np.float64) for z in zs]
            if warn:
                tol = 1e-9 * max(1.0, max(float(np.linalg.norm(m)) for m in W.mats))
                if any(np.any(np.abs(z) <= tol) for z in zs):
                    warnings.warn(
                        "pre-activation at a ReLU kink; returning the frozen-piece derivative",
                        BoundaryWarning,
                        stacklevel=3,
                    )
        else:
            self.masks = sig.masks()
            if sig.N != D.N or any(M.shape[1] != Wk.shape[1] for M, Wk in zip(self.masks, W.mats)):
                raise InvalidInputError("signature shape does not match weights and data")
            hs = kernels.frozen_forward(D.inputs, W.mats, self.masks)
        self.hs = hs
        self.resid = hs[-1][:, 0] - D.labels

    @property
    def y(self):
        return self.hs[-1][:, 0]

    def loss(self) -> float:
        return 0.5 * float(np.dot(self.resid, self.resid)) * self.D.weight

    def data_gradient(self) -> Params:
        return Params(kernels.backprop(self.hs, self.W.mats, self.masks, self.resid * self.D.weight))

    def data_hvp(self, X: Params) -> Params:
        w = self.D.weight
        return Params(kernels.hvp(self.hs, self.W.mats, self.masks, self.resid * w, X.mats, w))

    def jet(self, X: Params):
        return kernels.jet2(self.hs, self.W.mats, self.masks, X.mats)


def residuals(W: Params, D: Dataset, sig=None) -> np.ndarray:
    """``e_i = y(a_i, W) - f(a_i)``."""
    return Piece(W, D, sig).resid.copy()


def loss(W: Params, D: Dataset, sig=None) -> float:
    """Training error ``(1/2N) sum (f(a_i) - y(a_i, W))^2``."""
    return Piece(W, D, sig).loss()


def reg_loss(W: Params, D: Dataset, cfg, sig=None) -> float:
    cfg = _as_cfg(cfg)
    return Piece(W, D, sig).loss() + 0.5 * cfg.lam * W.norm_sq


def loss_and_gradient(W: Params, D: Dataset, cfg, sig=None, warn=True):
    cfg = _as_cfg(cfg)
    p = Piece(W, D, sig, warn=warn and sig is None)
    g = p.data_gradient()
    if cfg.lam:
        g = g + cfg.lam * W
    return p.loss() + 0.5 * cfg.lam * W.norm_sq, g


def gradient(W: Params, D: Dataset, cfg, sig=None, warn=True) -> Params:
    """Gradient of the regularized loss (frozen-piece one-sided at kinks).

    Emits :class:`BoundaryWarning` when a pre-activation sits at a kink.
    """
    return loss_and_gradient(W, D, cfg, sig, warn)[1]


def hvp(W: Params, D: Dataset, cfg, X: Params, sig=None) -> Params:
    """Hessian-vector product of the frozen regularized loss, matrix-free."""
    cfg = _as_cfg(cfg)
    out = Piece(W, D, sig).data_hvp(X)
    if cfg.lam:
        out = out + cfg.lam * X
    return out


def directional_second(W: Params, D: Dataset, cfg, X: Params, sig=None) -> float:
    """``d^2/dt^2`` at 0 of the frozen regularized loss along ``W + tX``.

    Uses ``(1/N) sum (ydot_i^2 + e_i * yddot_i) + lam ||X||^2`` where the
    output derivatives come from propagating the two-term jet.
    """
    cfg = _as_cfg(cfg)
    p = Piece(W, D, sig)
    yd, ydd = p.jet(X)
    data = float(np.dot(yd, yd) + np.dot(p.resid, ydd)) * D.weight
    return data + cfg.lam * X.norm_sq


def full_hessian(W: Params, D: Dataset, cfg, sig=None, cap: int = HESSIAN_CAP, return_asymmetry=False):
    """Dense Hessian of the frozen regularized loss, one HVP per column.

    The result is symmetrized; the pre-symmetrization max asymmetry is
    returned alongside when ``return_asymmetry`` is set.
    """
    cfg = _as_cfg(cfg)
    m = W.m
    if m > cap:
        raise ResourceError(
            f"{m} parameters exceeds the dense Hessian cap of {cap}; use hvp-based Rayleigh bounds instead"
        )
    arch = W.arch
    p = Piece(W, D, sig)
    Hm = np.empty((m, m))
    e = np.zeros(m)
    for j in range(m):
        e[j] = 1.0
        Hm[:, j] = p.data_hvp(Params.from_flat(arch, e)).flat()
        e[j] = 0.0
    asym = float(np.max(np.abs(Hm - Hm.T))) if m else 0.0
    Hm = 0.5 * (Hm + Hm.T)
    if cfg.lam:
        Hm[np.diag_indices(m)] += cfg.lam
    return (Hm, asym) if return_asymmetry else Hm


def laplacian(W: Params, D: Dataset, sig=None) -> float:
    """Trace of the frozen Hessian of the training error.

    Each weight enters the frozen output at most linearly, so the trace is
    ``(1/N) sum_i sum_w (d y_i / d w)^2``, a sum of squares.
    """
    p = Piece(W, D, sig)
    return float(np.sum(kernels.sq_jacobian_rows(p.hs, W.mats, p.masks))) * D.weight


def descend(W0: Params, D: Dataset, cfg, sig_mode: str = "relu", gtol: float = 1e-8, maxiter: int = 2000,
            dense_max: int = 400):
    """Full-batch trust-region Newton descent on the regularized loss.

    ``sig_mode`` is ``"relu"`` (switches follow the iterate) or ``"linear"``
    (all switches on). Models with at most ``dense_max`` parameters use the
    dense Hessian (trust-exact), larger ones Krylov subspaces. A few
    least-squares Newton steps then polish the gradient below what the
    loss values alone can resolve. Returns ``(W, grad_norm, converged)``.
    """
    cfg = _as_cfg(cfg)
    if sig_mode not in ("relu", "linear"):
        raise InvalidInputError(f"unknown mode {sig_mode!r}")
    arch = W0.arch
    sig = SwitchSignature.constant(arch, D.N, True) if sig_mode == "linear" else None
    cache = {}

    def fg(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            f, g = loss_and_gradient(Params.from_flat(arch, v), D, cfg, sig, warn=False)
            cache[key] = (f, g.flat())
        return cache[key]

    def hess(v):
        return full_hessian(Params.from_flat(arch, v), D, cfg, sig, cap=max(dense_max, HESSIAN_CAP))

    def hessp(v, x):
        return hvp(Params.from_flat(arch, v), D, cfg, Params.from_flat(arch, x), sig).flat()

    dense = W0.m <= dense_max
    with np.errstate(invalid="ignore"):
        res = scipy.optimize.minimize(
            lambda v: fg(v)[0],
            W0.flat(),
            jac=lambda v: fg(v)[1],
            **({"hess": hess} if dense else {"hessp": hessp}),
            method="trust-exact" if dense else "trust-krylov",
            options={"gtol": gtol, "maxiter": maxiter},
        )
    v = res.x
    gn = float(np.linalg.norm(fg(v)[1]))
    if dense:
        for _ in range(20):
            if gn <= gtol:
                break
            step = np.linalg.lstsq(hess(v), -fg(v)[1], rcond=None)[0]
            trial = v + step
            gt = float(np.linalg.norm(fg(trial)[1]))
            # stay near the same level: never trade loss for a smaller gradient
            if not (gt < gn and fg(trial)[0] <= fg(v)[0] + 1e-12 * abs(fg(v)[0])):
                break
            v, gn = trial, gt
    W = Params.from_flat(arch, v)
    gn = gradient(W, D, cfg, sig, warn=False).norm
    return W, gn, bool(gn <= gtol)


def batch_gradient(W: Params, inputs: np.ndarray, labels: np.ndarray, lam: float) -> Params:
    """Regularized-loss gradient on a raw minibatch, skipping dataset validation."""
    hs, zs = kernels.forward(inputs, W.mats)
    masks = [(z > 0.0).astype(np.float64) for z in zs]
    n = inputs.shape[0]
    g = Params(kernels.backprop(hs, W.mats, masks, (hs[-1][:, 0] - labels) / n))
    return g + lam * W if lam else g
