"""Curvature diagnostics along gradient-flow and SGD paths.

Along a path ``W(t)`` the restricted loss ``gamma(t) = lam-loss(W(t))`` has
``gamma'' = 2 g^T H g`` for the gradient flow, with ``g`` the gradient and
``H`` the (frozen) Hessian. The normalized value ``gamma'' / ||g||^2``
bounds the exponential decay rate of ``||g||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .errors import DivergenceError, InvalidInputError, MonotonicityError
from .loss import LossConfig, _as_cfg, batch_gradient, gradient, hvp, loss_and_gradient, reg_loss
from .net import Dataset, Params, switch_signature

GRAD_SQ_FLOOR = 1e-30
DIVERGENCE_FACTOR = 1e6


@dataclass
class GammaSecond:
    primary: float
    secondary: float
    same_piece: bool

    @property
    def discrepancy(self) -> float:
        return abs(self.primary - self.secondary)

    @property
    def rel_discrepancy(self) -> float:
        scale = max(abs(self.primary), abs(self.secondary))
        return self.discrepancy / scale if scale > 0 else 0.0


def gamma_second(W: Params, D: Dataset, cfg, h_rel: float = 1e-4, secondary: bool = True) -> GammaSecond:
    """``gamma''`` by an HVP (authoritative) and by differentiating ``||g||^2`` along ``g``.

    The second route uses a fourth-order central stencil on the true
    (switch-following) gradient; ``same_piece`` reports whether all stencil
    points share the activation pattern of ``W``.
    """
    cfg = _as_cfg(cfg)
    g = gradient(W, D, cfg, warn=False)
    gn = g.norm
    if gn == 0.0:
        return GammaSecond(0.0, 0.0, True)
    primary = 2.0 * g.dot(hvp(W, D, cfg, g))
    if not secondary:
        return GammaSecond(primary, math.nan, True)
    u = g / gn
    h = h_rel * (1.0 + W.norm)
    sig0 = switch_signature(W, D, eps_b=0.0)
    q = {}
    same = True
    for s in (-2, -1, 1, 2):
        Ws = W + (s * h) * u
        q[s] = gradient(Ws, D, cfg, warn=False).norm_sq
        same = same and switch_signature(Ws, D, eps_b=0.0).same_bits(sig0)
    dq = (-q[2] + 8.0 * q[1] - 8.0 * q[-1] + q[-2]) / (12.0 * h)
    return GammaSecond(primary, gn * dq, same)


def normalized_second(W: Params, D: Dataset, cfg, floor: float = GRAD_SQ_FLOOR) -> Optional[float]:
    """``gamma'' / ||g||^2``, or ``None`` when the gradient vanishes."""
    cfg = _as_cfg(cfg)
    g = gradient(W, D, cfg, warn=False)
    gsq = g.norm_sq
    if gsq <= floor:
        return None
    return 2.0 * g.dot(hvp(W, D, cfg, g)) / gsq


@dataclass
class TrajectoryRecord:
    t: List[float] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    grad_sq: List[float] = field(default_factory=list)
    gamma_dd: List[float] = field(default_factory=list)
    normalized: List[Optional[float]] = field(default_factory=list)
    boundary_hit: List[bool] = field(default_factory=list)
    t0: Optional[float] = None
    t1: Optional[float] = None
    C: Optional[float] = None
    kind: str = "flow"
    meta: dict = field(default_factory=dict)
    final: Optional[Params] = field(default=None, repr=False)
    weights: List[Params] = field(default_factory=list, repr=False)  # only filled when requested

    def __len__(self):
        return len(self.t)

    def append(self, t, loss, grad_sq, gamma_dd, boundary_hit):
        if self.t and not t > self.t[-1]:
            raise InvalidInputError("trajectory times must be strictly increasing")
        self.t.append(float(t))
        self.loss.append(float(loss))
        self.grad_sq.append(float(grad_sq))
        self.gamma_dd.append(float(gamma_dd))
        self.normalized.append(float(gamma_dd) / grad_sq if grad_sq > GRAD_SQ_FLOOR else None)
        self.boundary_hit.append(bool(boundary_hit))

    def finalize(self):
        self.t1 = self.t[-1] if self.t else None
        self.t0 = detect_t0(self)
        if self.t0 is not None:
            vals = [n for t, n in zip(self.t, self.normalized) if t >= self.t0 and n is not None]
            self.C = min(vals) if vals else None
        return self

    def rows(self):
        return zip(self.t, self.loss, self.grad_sq, self.gamma_dd, self.normalized, self.boundary_hit)

    def same_as(self, other: "TrajectoryRecord") -> bool:
        return (
            self.t == other.t and self.loss == other.loss and self.grad_sq == other.grad_sq
            and self.gamma_dd == other.gamma_dd and self.normalized == other.normalized
            and self.boundary_hit == other.boundary_hit and self.t0 == other.t0
        )

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "samples": len(self.t),
            "t0": self.t0,
            "t1": self.t1,
            "C": self.C,
            "loss_initial": self.loss[0] if self.loss else None,
            "loss_final": self.loss[-1] if self.loss else None,
            "loss_change_fraction": loss_change_fraction(self) if self.t else None,
            "boundary_hits": int(sum(self.boundary_hit)),
        }


class _Logger:
    # full-dataset diagnostics at logging boundaries
    def __init__(self, D, cfg, rec, keep_weights=False):
        self.D, self.cfg, self.rec = D, cfg, rec
        self.keep = keep_weights
        self.prev_key = None

    def __call__(self, t, W):
        f, g = loss_and_gradient(W, self.D, self.cfg, warn=False)
        gsq = g.norm_sq
        gdd = 2.0 * g.dot(hvp(W, self.D, self.cfg, g)) if gsq > 0.0 else 0.0
        key = switch_signature(W, self.D, eps_b=0.0).key()
        hit = self.prev_key is not None and key != self.prev_key
        self.prev_key = key
        self.rec.append(t, f, gsq, gdd, hit)
        if self.keep:
            self.rec.weights.append(W)
        return f


def default_step(W0: Params, D: Dataset, cfg) -> float:
    return 1e-2 / (1.0 + gradient(W0, D, cfg, warn=False).norm)


def gradient_flow(W0: Params, D: Dataset, cfg, step: Optional[float] = None, T: float = 1.0,
                  log_every: int = 1, keep_weights: bool = False) -> TrajectoryRecord:
    """Integrate ``W' = -grad lam-loss(W)`` with fixed-step classical RK4.

    Diagnostics are logged every ``log_every`` steps and at ``T``. Raises
    :class:`MonotonicityError` if the loss rises by more than
    ``1e-8 |gamma|`` and :class:`DivergenceError` past ``1e6`` times the
    initial loss; both carry the partial record. ``keep_weights`` stores
    the weights at every logged sample in ``rec.weights``.
    """
    cfg = _as_cfg(cfg)
    if step is None:
        step = default_step(W0, D, cfg)
    if not (step > 0 and T > 0):
        raise InvalidInputError("step and T must be positive")
    if log_every < 1:
        raise InvalidInputError("log_every must be >= 1")
    n_steps = max(1, int(math.ceil(T / step - 1e-9)))
    h = T / n_steps
    rec = TrajectoryRecord(kind="flow", meta={"step": h, "T": T, "lam": cfg.lam, "log_every": log_every})
    log = _Logger(D, cfg, rec, keep_weights)

    def F(W):
        return -gradient(W, D, cfg, warn=False)

    W = W0
    gamma0 = log(0.0, W)
    prev = gamma0
    for k in range(1, n_steps + 1):
        k1 = F(W)
        k2 = F(W + (0.5 * h) * k1)
        k3 = F(W + (0.5 * h) * k2)
        k4 = F(W + h * k3)
        W = W + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = k * h
        if k % log_every == 0 or k == n_steps:
            cur = log(t, W)
        else:
            cur = reg_loss(W, D, cfg)
        if not math.isfinite(cur) or cur > DIVERGENCE_FACTOR * max(gamma0, 1e-300):
            rec.final = W
            raise DivergenceError(f"loss {cur:.3e} diverged at t={t:.6g}", rec.finalize())
        if cur > prev + 1e-8 * abs(prev):
            rec.final = W
            raise MonotonicityError(
                f"loss increased from {prev:.17g} to {cur:.17g} at t={t:.6g}; try step {h / 2:.3g}",
                rec.finalize(),
                h / 2,
            )
        prev = cur
    rec.final = W
    return rec.finalize()


@dataclass(frozen=True)
class SgdConfig:
    batch_size: int = 128
    epochs: int = 2
    lr: Union[float, Sequence] = 0.05
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.log_every < 1:
            raise InvalidInputError("batch_size, epochs and log_every must be >= 1")
        for _, rate in self.schedule():
            if rate < 0:
                raise InvalidInputError("learning rates must be non-negative")

    def schedule(self):
        """Piecewise-constant schedule as sorted ``(first_epoch, rate)`` pairs."""
        if isinstance(self.lr, (int, float)):
            return [(0, float(self.lr))]
        sched = sorted((int(e), float(r)) for e, r in self.lr)
        if not sched or sched[0][0] != 0:
            raise InvalidInputError("learning-rate schedule must start at epoch 0")
        return sched

    def rate(self, epoch: int) -> float:
        current = 0.0
        for start, r in self.schedule():
            if epoch >= start:
                current = r
        return current


def sgd_train(W0: Params, D: Dataset, cfg, sgdcfg: SgdConfig) -> TrajectoryRecord:
    """Plain minibatch SGD on the regularized loss, deterministic per seed.

    Times are step counts. Diagnostics use the full training loss at each
    logging boundary; minibatch losses never enter them.
    """
    cfg = _as_cfg(cfg)
    if sgdcfg.batch_size > D.N:
        raise InvalidInputError(f"batch size {sgdcfg.batch_size} exceeds dataset size {D.N}")
    rng = np.random.default_rng(sgdcfg.seed)
    rec = TrajectoryRecord(kind="sgd", meta={"seed": sgdcfg.seed, "lam": cfg.lam, "batch_size": sgdcfg.batch_size,
                                             "epochs": sgdcfg.epochs, "log_every": sgdcfg.log_every})
    log = _Logger(D, cfg, rec)
    X, y = D.inputs, D.labels
    W = W0
    gamma0 = log(0, W)
    step = 0
    for epoch in range(sgdcfg.epochs):
        lr = sgdcfg.rate(epoch)
        perm = rng.permutation(D.N)
        for start in range(0, D.N, sgdcfg.batch_size):
            idx = np.sort(perm[start:start + sgdcfg.batch_size])
            if lr:
                W = W - lr * batch_gradient(W, X[idx], y[idx], cfg.lam)
            step += 1
            last = epoch == sgdcfg.epochs - 1 and start + sgdcfg.batch_size >= D.N
            if step % sgdcfg.log_every == 0 or last:
                cur = log(step, W)
                if not math.isfinite(cur) or cur > DIVERGENCE_FACTOR * max(gamma0, 1e-300):
                    rec.final = W
                    raise DivergenceError(f"loss {cur:.3e} diverged at step {step}", rec.finalize())
    rec.final = W
    return rec.finalize()


def _moving_average(x, window):
    x = np.asarray(x, dtype=float)
    if window <= 1:
        return x
    kernel = np.ones(window) / window
    padded = np.concatenate([np.full(window - 1, x[0]), x])
    return np.convolve(padded, kernel, mode="valid")


def detect_t0(traj: TrajectoryRecord, smooth: int = 0) -> Optional[float]:
    """Earliest logged time after which every logged ``gamma''`` is strictly positive.

    ``smooth`` applies a trailing moving average first; it defaults to off.
    """
    if not traj.t:
        raise InvalidInputError("empty trajectory")
    vals = _moving_average(traj.gamma_dd, smooth)
    if not vals[-1] > 0.0:
        return None
    k = len(vals) - 1
    while k > 0 and vals[k - 1] > 0.0:
        k -= 1
    return traj.t[k]


def loss_fraction(gamma_start: float, gamma_t0: float, gamma_end: float) -> Optional[float]:
    """``(gamma(t0) - gamma(t1)) / (gamma(0) - gamma(t1))``; ``None`` for a flat path."""
    denom = gamma_start - gamma_end
    if denom == 0.0:
        return None
    return (gamma_t0 - gamma_end) / denom


def loss_change_fraction(traj: TrajectoryRecord) -> Optional[float]:
    """Share of the loss decrease that happens inside the convex regime; ``None`` if undefined."""
    t0 = traj.t0 if traj.t0 is not None else detect_t0(traj)
    if t0 is None:
        return None
    k0 = traj.t.index(t0)
    return loss_fraction(traj.loss[0], traj.loss[k0], traj.loss[-1])


@dataclass
class GronwallReport:
    holds: bool
    worst_ratio: float
    violations: int
    checked: int
    C: float
    window: tuple
    tol: float

    def to_dict(self) -> dict:
        return {"holds": self.holds, "worst_ratio": self.worst_ratio, "violations": self.violations,
                "checked": self.checked, "C": self.C, "window": list(self.window), "tol": self.tol}


def gronwall_check(traj: TrajectoryRecord, C: Optional[float] = None, window: Optional[tuple] = None,
                   tol: Optional[float] = None) -> GronwallReport:
    """Check ``||g(t)||^2 <= ||g(ts)||^2 exp(-C (t - ts)) (1 + tol)`` on a flow window.

    Defaults: window ``[t0, t1]``, ``C`` the record's minimum normalized value
    there, ``tol = 10 * step^4``.
    """
    if traj.kind != "flow":
        raise InvalidInputError("the decay estimate applies to gradient-flow records only")
    if window is None:
        if traj.t0 is None:
            raise InvalidInputError("trajectory has no convex regime; pass an explicit window")
        window = (traj.t0, traj.t1)
    ts, te = window
    idx = [k for k, t in enumerate(traj.t) if ts <= t <= te]
    if not idx:
        raise InvalidInputError(f"no samples in window {window}")
    if C is None:
        vals = [traj.normalized[k] for k in idx if traj.normalized[k] is not None]
        C = min(vals) if vals else 0.0
    if tol is None:
        tol = 10.0 * traj.meta.get("step", 0.0) ** 4
    g0 = traj.grad_sq[idx[0]]
    t_start = traj.t[idx[0]]
    worst = 0.0
    bad = 0
    for k in idx:
        bound = g0 * math.exp(-C * (traj.t[k] - t_start))
        ratio = traj.grad_sq[k] / bound if bound > 0 else (0.0 if traj.grad_sq[k] == 0 else math.inf)
        worst = max(worst, ratio)
        if ratio > 1.0 + tol:
            bad += 1
    return GronwallReport(bad == 0, worst, bad, len(idx), C, (ts, te), tol)


@dataclass
class PercentileStat:
    mean: Optional[float]
    std: Optional[float]
    per_trial: list

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "per_trial": self.per_trial}


def trial_percentile(traj: TrajectoryRecord, p: float) -> Optional[float]:
    t0 = traj.t0 if traj.t0 is not None else detect_t0(traj)
    if t0 is None:
        return None
    vals = [n for t, n in zip(traj.t, traj.normalized) if t >= t0 and n is not None]
    if not vals:
        return None
    return float(np.percentile(vals, p, method="linear"))


def percentile_stat(trajs: Sequence[TrajectoryRecord], p: float = 10.0) -> PercentileStat:
    """Per-trial ``p``-th percentile of in-regime normalized values, then mean and sample std.

    Trials are ordered by their ``meta['seed']`` (when present) before
    reduction so the result does not depend on completion order.
    """
    if not 0.0 <= p <= 100.0:
        raise InvalidInputError("percentile must lie in [0, 100]")
    ordered = sorted(trajs, key=lambda r: r.meta.get("seed", 0))
    per = [trial_percentile(r, p) for r in ordered]
    vals = [v for v in per if v is not None]
    if not vals:
        return PercentileStat(None, None, per)
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return PercentileStat(mean, std, per)
