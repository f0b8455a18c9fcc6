"""Strong-convexity region ``U(lam, theta)``, curvature floors and certificates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError, NotCriticalError
from .linalg import min_eigenpair
from .loss import LossConfig, directional_second, full_hessian, gradient, loss, reg_loss
from .net import Architecture, Dataset, Params, SwitchSignature, init_params, star_norm, switch_signature

__all__ = [
    "RegionSpec",
    "Certificate",
    "star_norm",
    "u_threshold",
    "u_membership",
    "curvature_floor",
    "audit_curvature_floor",
    "global_min_capture",
    "certify",
    "isolation_probe",
    "estimate_inf_reg_loss",
]


@dataclass(frozen=True)
class RegionSpec:
    lam: float
    theta: float
    r: float
    H: int

    def __post_init__(self):
        if not (self.theta > 0.0):
            raise InvalidInputError(f"theta must be positive, got {self.theta}")
        if not (self.lam > self.theta):
            raise InvalidInputError(f"need lam > theta, got lam={self.lam}, theta={self.theta}")
        if not (self.r > 0.0):
            raise InvalidInputError(f"radius must be positive, got {self.r}")
        if int(self.H) < 1:
            raise InvalidInputError(f"hidden depth must be >= 1, got {self.H}")

    @classmethod
    def for_data(cls, D: Dataset, lam: float, theta: float, H: int) -> "RegionSpec":
        return cls(lam, theta, D.radius, H)


def _threshold(lam_minus_theta: float, H: int, r: float) -> float:
    return lam_minus_theta / (math.sqrt(2.0) * H * (H + 1) * r)


def u_threshold(spec: RegionSpec) -> float:
    """Right-hand side ``(lam - theta) / (sqrt(2) H (H+1) r)`` of the membership test."""
    return _threshold(spec.lam - spec.theta, spec.H, spec.r)


def _membership_lhs(W: Params, D: Dataset, sig=None) -> float:
    # 0.0 ** 0 == 1.0, which is the intended value for H = 1
    return math.sqrt(loss(W, D, sig)) * star_norm(W) ** (W.H - 1)


def u_membership(W: Params, D: Dataset, spec: RegionSpec):
    """Return ``(in_U, margin)``; membership is the strict inequality ``margin > 0``."""
    if W.H != spec.H:
        raise InvalidInputError(f"weights have depth {W.H}, spec has {spec.H}")
    margin = u_threshold(spec) - _membership_lhs(W, D)
    return bool(margin > 0.0), float(margin)


def in_u_lambda(W: Params, D: Dataset, lam: float, r: Optional[float] = None, sig=None) -> bool:
    """Membership in the union over ``theta > 0``, i.e. ``theta -> 0``."""
    r = D.radius if r is None else r
    return _membership_lhs(W, D, sig) < _threshold(lam, W.H, r)


def curvature_floor(W: Params, D: Dataset, r: Optional[float] = None) -> float:
    """Lower bound per unit ``||X||^2`` on the frozen second directional derivative of the training error."""
    r = D.radius if r is None else float(r)
    H = W.H
    return -math.sqrt(2.0) * H * (H + 1) * star_norm(W) ** (H - 1) * r * math.sqrt(loss(W, D))


@dataclass
class CurvatureFloorReport:
    trials: int
    floor: float
    min_second: float
    worst_slack: float
    violations: int
    seed: int
    first_violation: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.violations == 0


def audit_curvature_floor(W: Params, D: Dataset, trials: int = 1000, seed: int = 0, r: Optional[float] = None,
                  sig: Optional[SwitchSignature] = None) -> CurvatureFloorReport:
    """Monte-Carlo audit of the curvature floor over random unit directions."""
    floor = curvature_floor(W, D, r)
    rng = np.random.default_rng(seed)
    arch = W.arch
    cfg = LossConfig(0.0)
    if sig is None:
        sig = switch_signature(W, D)
    min_second = math.inf
    worst = math.inf
    violations = 0
    first = None
    for k in range(trials):
        v = rng.standard_normal(arch.m)
        X = Params.from_flat(arch, v / np.linalg.norm(v))
        d2 = directional_second(W, D, cfg, X, sig)
        slack = d2 - floor * X.norm_sq
        min_second = min(min_second, d2)
        worst = min(worst, slack)
        if slack < 0.0:
            violations += 1
            if first is None:
                first = k
    return CurvatureFloorReport(trials, floor, min_second, worst, violations, seed, first)


def global_min_capture(lam: float, H: int, r: float) -> float:
    """Bound on ``inf lam-loss`` below which ``U(lam, theta)`` holds every global minimizer for some theta."""
    if not (lam > 0 and r > 0 and H >= 1):
        raise InvalidInputError("need lam > 0, r > 0 and H >= 1")
    return lam ** (1.0 + 1.0 / H) / (2.0 * (H * (H + 1) * r) ** (2.0 / H))


def estimate_inf_reg_loss(arch: Architecture, D: Dataset, cfg, starts: int = 32, seed: int = 0,
                          gtol: float = 1e-10, maxiter: int = 500):
    """Best regularized loss over multi-start descents; an upper bound on the infimum."""
    from .loss import descend

    best = (math.inf, None)
    for s in range(starts):
        rng = np.random.default_rng([seed, s])
        W0 = init_params(arch, rng)
        W, _, _ = descend(W0, D, cfg, gtol=gtol, maxiter=maxiter)
        val = reg_loss(W, D, cfg)
        if val < best[0]:
            best = (val, W)
    return best


@dataclass
class Certificate:
    in_U: bool
    margin: float
    signature: SwitchSignature = field(repr=False)
    min_eig: float
    certified: bool
    theta: float
    eig_residual: float = 0.0
    boundary: bool = False

    def to_dict(self) -> dict:
        return {
            "in_U": self.in_U,
            "margin": self.margin,
            "min_eig": self.min_eig,
            "eig_residual": self.eig_residual,
            "theta": self.theta,
            "certified": self.certified,
            "on_boundary": self.boundary,
        }


CERT_TOL = 1e-8


def certify(W: Params, D: Dataset, spec: RegionSpec, cap: int = 4096) -> Certificate:
    """Pointwise piecewise-strong-convexity certificate at ``W``.

    ``certified`` requires membership in ``U(lam, theta)`` and a frozen
    Hessian floor of at least ``theta`` (up to ``1e-8``).
    """
    in_U, margin = u_membership(W, D, spec)
    sig = switch_signature(W, D)
    Hm = full_hessian(W, D, LossConfig(spec.lam), sig=sig, cap=cap)
    mu, _, res = min_eigenpair(Hm)
    certified = bool(in_U and mu >= spec.theta - CERT_TOL)
    return Certificate(in_U, margin, sig, mu, certified, spec.theta, res, sig.any_boundary)


@dataclass
class IsolationReport:
    n_perturb: int
    radius: float
    grad_norm: float
    min_increase: float
    required: float
    certified: bool
    passed: Optional[bool]  # None when the point is not certified

    def to_dict(self) -> dict:
        return dict(self.__dict__)


CRITICAL_TOL = 1e-6


def isolation_probe(W: Params, D: Dataset, spec: RegionSpec, n_perturb: int = 200, radius: float = 1e-2,
                    seed: int = 0, grad_scale: float = 0.0, rel_tol: float = 1e-3,
                    certificate: Optional[Certificate] = None) -> IsolationReport:
    """Quadratic-growth probe around a critical point on a sphere of ``radius``.

    ``grad_scale`` is the reference gradient norm (e.g. at the start of the
    run that produced ``W``); the critical-point tolerance is
    ``1e-6 * (1 + grad_scale)``. Directions come from one seeded stream,
    generated up front, so any evaluation order gives the same report.
    """
    cfg = LossConfig(spec.lam)
    gn = gradient(W, D, cfg, warn=False).norm
    tol = CRITICAL_TOL * (1.0 + grad_scale)
    if gn > tol:
        raise NotCriticalError(f"gradient norm {gn:.3e} exceeds critical-point tolerance {tol:.3e}")
    if certificate is None:
        certificate = certify(W, D, spec)
    arch = W.arch
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dirs = rng.standard_normal((n_perturb, arch.m))
    dirs *= radius / np.linalg.norm(dirs, axis=1, keepdims=True)
    base = reg_loss(W, D, cfg)
    flat = W.flat()
    inc = min(reg_loss(Params.from_flat(arch, flat + d), D, cfg) - base for d in dirs)
    required = 0.5 * spec.theta * radius ** 2 * (1.0 - rel_tol)
    passed = bool(inc >= required) if certificate.certified else None
    return IsolationReport(n_perturb, radius, gn, float(inc), required, certificate.certified, passed)
