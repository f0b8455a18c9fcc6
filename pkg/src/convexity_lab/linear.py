"""Linear networks: every switch on, rotation degeneracy and critical-point audits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .loss import _as_cfg, descend, gradient, reg_loss
from .net import Architecture, Dataset, Params, SwitchSignature, init_params
from .region import in_u_lambda

ORTHO_TOL = 1e-12
DET_TOL = 1e-10


def all_on(W: Params, D: Dataset) -> SwitchSignature:
    return SwitchSignature.constant(W.arch, D.N, True)


def linear_loss(W: Params, D: Dataset, cfg) -> float:
    """Regularized loss of the network with every ReLU replaced by the identity."""
    return reg_loss(W, D, cfg, sig=all_on(W, D))


def linear_gradient(W: Params, D: Dataset, cfg) -> Params:
    return gradient(W, D, cfg, sig=all_on(W, D), warn=False)


def require_wide(arch: Architecture):
    narrow = [i for i, w in enumerate(arch.widths[1:-1], start=1) if w <= 1]
    if narrow:
        raise InvalidInputError(
            f"hidden layers {narrow} have width 1; the rotation argument needs every hidden width > 1"
        )


@dataclass
class RotationPlan:
    layer: int
    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise InvalidInputError(f"rotation must be square, got {R.shape}")
        if np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) > ORTHO_TOL:
            raise InvalidInputError("rotation is not orthogonal to 1e-12")
        if abs(np.linalg.det(R) - 1.0) > DET_TOL:
            raise InvalidInputError("rotation must have determinant +1")
        self.R = R


def givens(n: int, p: int, q: int, angle: float) -> np.ndarray:
    R = np.eye(n)
    c, s = math.cos(angle), math.sin(angle)
    R[p, p] = c
    R[q, q] = c
    R[p, q] = -s
    R[q, p] = s
    return R


def random_rotation(n: int, rng: np.random.Generator, n_factors: Optional[int] = None) -> np.ndarray:
    """Product of Givens rotations in random coordinate planes with uniform angles."""
    if n < 2:
        raise InvalidInputError("rotations need dimension >= 2")
    if n_factors is None:
        n_factors = n * (n - 1)
    R = np.eye(n)
    for _ in range(n_factors):
        p, q = rng.choice(n, size=2, replace=False)
        R = givens(n, int(p), int(q), rng.uniform(-math.pi, math.pi)) @ R
    # re-orthogonalize accumulated roundoff
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def rotate_weights(W: Params, plan: RotationPlan) -> Params:
    """``(W_0, .., W_i R^T, R W_{i+1}, .., W_H)`` for ``i = plan.layer``."""
    i = plan.layer
    if not 0 <= i <= W.H - 1:
        raise InvalidInputError(f"rotation layer must lie in 0..{W.H - 1}, got {i}")
    n = W.mats[i].shape[1]
    if plan.R.shape != (n, n):
        raise InvalidInputError(f"rotation for layer {i} must be {n}x{n}")
    mats = list(W.mats)
    mats[i] = W.mats[i] @ plan.R.T
    mats[i + 1] = plan.R @ W.mats[i + 1]
    return Params(mats)


@dataclass
class DegeneracyReport:
    applicable: bool
    layer: Optional[int]
    mode: str
    base_loss: float
    deltas: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    passed: list = field(default_factory=list)

    @property
    def all_equal(self) -> bool:
        return self.applicable and all(self.passed)

    @property
    def violations(self) -> int:
        return sum(not p for p in self.passed)

    def to_dict(self) -> dict:
        return {"applicable": self.applicable, "layer": self.layer, "mode": self.mode,
                "base_loss": self.base_loss, "max_delta": max(self.deltas, default=0.0),
                "min_distance": min(self.distances, default=0.0), "violations": self.violations,
                "angles": len(self.passed)}


def degeneracy_audit(W: Params, D: Dataset, cfg, angles: Sequence[float], layer: Optional[int] = None,
                     plane=(0, 1), mode: str = "linear", rtol: float = 1e-10) -> DegeneracyReport:
    """Rotate a hidden layer by each angle and compare regularized losses.

    In ``linear`` mode equality to ``rtol * (1 + loss)`` shows ``W`` sits on
    a continuum of equal-loss points. In ``relu`` mode the switches can
    break the symmetry; violations are recorded, not raised.
    """
    cfg = _as_cfg(cfg)
    if W.norm == 0.0:
        raise InvalidInputError("the audit needs a non-zero weight")
    if mode not in ("linear", "relu"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    require_wide(W.arch)
    evaluate = (lambda V: linear_loss(V, D, cfg)) if mode == "linear" else (lambda V: reg_loss(V, D, cfg))
    base = evaluate(W)
    if layer is None:
        layer = next((i for i in range(W.H) if np.any(W.mats[i])), None)
    if layer is None or not np.any(W.mats[layer]):
        return DegeneracyReport(False, layer, mode, base)
    n = W.mats[layer].shape[1]
    p, q = plane
    rep = DegeneracyReport(True, layer, mode, base)
    for a in angles:
        Wt = rotate_weights(W, RotationPlan(layer, givens(n, p, q, float(a))))
        d = abs(evaluate(Wt) - base)
        rep.deltas.append(d)
        rep.distances.append((Wt - W).norm)
        rep.passed.append(bool(d <= rtol * (1.0 + base)))
    return rep


@dataclass
class CriticalPoint:
    W: Params = field(repr=False)
    grad_norm: float
    norm: float
    reg_loss: float
    in_U_lambda: bool
    converged: bool
    start: int

    def to_dict(self) -> dict:
        return {"start": self.start, "grad_norm": self.grad_norm, "norm": self.norm, "reg_loss": self.reg_loss,
                "in_U_lambda": self.in_U_lambda, "converged": self.converged}


@dataclass
class CriticalSearchReport:
    points: list
    zero_tol: float

    @property
    def offending(self) -> list:
        """Converged points inside ``U(lam)`` that are not the origin."""
        return [p for p in self.points if p.converged and p.in_U_lambda and p.norm > self.zero_tol]

    @property
    def ok(self) -> bool:
        return not self.offending

    def to_dict(self) -> dict:
        return {"points": [p.to_dict() for p in self.points], "zero_tol": self.zero_tol,
                "offending": len(self.offending),
                "converged": sum(p.converged for p in self.points)}


def critical_search(arch: Architecture, D: Dataset, cfg, starts: int = 32, seed: int = 0,
                    gtol: float = 1e-8, zero_tol: float = 1e-6, init_scales=(0.1, 0.5, 1.0, 2.0),
                    maxiter: int = 2000) -> CriticalSearchReport:
    """Multi-start search for critical points of the linear-net regularized loss.

    Each start is seeded by ``(seed, index)`` and descended until the
    gradient norm drops below the absolute tolerance ``gtol``. A relative
    tolerance would stop starts that are still sliding into the origin
    (where the gradient is about ``lam * ||W||``) at a norm above
    ``zero_tol``.
    """
    cfg = _as_cfg(cfg)
    require_wide(arch)
    if cfg.lam <= 0:
        raise InvalidInputError("the audit needs positive weight decay")
    points = []
    for s in range(starts):
        rng = np.random.default_rng([seed, s])
        W0 = init_params(arch, rng, scale=init_scales[s % len(init_scales)])
        W, gn, conv = descend(W0, D, cfg, sig_mode="linear", gtol=gtol, maxiter=maxiter)
        points.append(CriticalPoint(W, gn, W.norm, linear_loss(W, D, cfg), in_u_lambda(W, D, cfg.lam, sig=all_on(W, D)),
                                    conv, s))
    return CriticalSearchReport(points, zero_tol)
