"""Bias-free ReLU networks in switch-matrix form.

A network with hidden depth ``H`` has weight matrices ``W_0..W_H`` with
``W_i`` of shape ``(n_i, n_{i+1})`` and a scalar output. ReLU is applied at
every layer, the output included. Layers carrying switches are numbered
``1..H+1`` throughout; sample and unit indices are zero-based.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .linalg import spectral_norm


@dataclass(frozen=True)
class Architecture:
    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise InvalidInputError("need input, at least one hidden layer and output widths")
        if widths[-1] != 1:
            raise InvalidInputError(f"output width must be 1, got {widths[-1]}")
        if widths[0] < 1:
            raise InvalidInputError("input width must be positive")
        if any(w <= 1 for w in widths[1:-1]):
            raise InvalidInputError(f"hidden widths must exceed 1, got {widths[1:-1]}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        try:
            widths = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        except ValueError as exc:
            raise InvalidInputError(f"bad architecture {text!r}") from exc
        return cls(widths)

    @property
    def H(self) -> int:
        return len(self.widths) - 2

    @property
    def shapes(self):
        return [(self.widths[i], self.widths[i + 1]) for i in range(len(self.widths) - 1)]

    @property
    def m(self) -> int:
        return sum(a * b for a, b in self.shapes)

    def __str__(self):
        return ",".join(map(str, self.widths))


class Params:
    """Immutable collection of layer weight matrices.

    Also used for perturbation directions, gradients and Hessian-vector
    products, so it supports the vector-space operations.
    """

    __slots__ = ("mats", "_norm_sq")

    def __init__(self, mats: Sequence):
        out = []
        for m in mats:
            a = np.array(m, dtype=np.float64, order="C", copy=True)
            if a.ndim == 1:
                a = a.reshape(-1, 1)
            if a.ndim != 2:
                raise InvalidInputError(f"weight matrices must be 2-D, got shape {a.shape}")
            a.flags.writeable = False
            out.append(a)
        for prev, nxt in zip(out, out[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise InvalidInputError(f"incompatible layer shapes {prev.shape} -> {nxt.shape}")
        if not out or out[-1].shape[1] != 1:
            raise InvalidInputError("last weight matrix must have a single column")
        self.mats = tuple(out)
        self._norm_sq = None

    @classmethod
    def zeros(cls, arch: Architecture) -> "Params":
        return cls([np.zeros(s) for s in arch.shapes])

    @classmethod
    def from_flat(cls, arch: Architecture, v) -> "Params":
        v = np.asarray(v, dtype=float)
        if v.shape != (arch.m,):
            raise InvalidInputError(f"expected {arch.m} parameters, got {v.shape}")
        mats, pos = [], 0
        for r, c in arch.shapes:
            mats.append(v[pos:pos + r * c].reshape(r, c))
            pos += r * c
        return cls(mats)

    @property
    def arch(self) -> Architecture:
        return Architecture(tuple(m.shape[0] for m in self.mats) + (1,))

    @property
    def H(self) -> int:
        return len(self.mats) - 1

    @property
    def m(self) -> int:
        return sum(a.size for a in self.mats)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.mats])

    @property
    def norm_sq(self) -> float:
        if self._norm_sq is None:
            self._norm_sq = float(sum(np.dot(a.ravel(), a.ravel()) for a in self.mats))
        return self._norm_sq

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq))

    def dot(self, other: "Params") -> float:
        return float(sum(np.dot(a.ravel(), b.ravel()) for a, b in zip(self.mats, other.mats)))

    def _check(self, other):
        if not isinstance(other, Params) or len(other.mats) != len(self.mats) or any(
            a.shape != b.shape for a, b in zip(self.mats, other.mats)
        ):
            raise InvalidInputError("parameter collections have different shapes")

    def __add__(self, other):
        self._check(other)
        return Params([a + b for a, b in zip(self.mats, other.mats)])

    def __sub__(self, other):
        self._check(other)
        return Params([a - b for a, b in zip(self.mats, other.mats)])

    def __mul__(self, c):
        c = float(c)
        return Params([c * a for a in self.mats])

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def __neg__(self):
        return self * -1.0

    def __len__(self):
        return len(self.mats)

    def __getitem__(self, i):
        return self.mats[i]

    def __iter__(self):
        return iter(self.mats)

    def __eq__(self, other):
        return (
            isinstance(other, Params)
            and len(other.mats) == len(self.mats)
            and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.mats, other.mats))
        )

    __hash__ = None

    def __repr__(self):
        return f"Params(arch={self.arch}, norm={self.norm:.6g})"

    def allclose(self, other, rtol=1e-10, atol=0.0) -> bool:
        self._check(other)
        return all(np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(self.mats, other.mats))


def init_params(arch: Architecture, rng: np.random.Generator, scale: float = 1.0) -> Params:
    """He-style Gaussian initialization, ``std = scale * sqrt(2 / fan_in)``."""
    return Params([rng.standard_normal(s) * scale * np.sqrt(2.0 / s[0]) for s in arch.shapes])


def random_direction(arch: Architecture, rng: np.random.Generator, unit: bool = True) -> Params:
    v = rng.standard_normal(arch.m)
    if unit:
        v /= np.linalg.norm(v)
    return Params.from_flat(arch, v)


class Dataset:
    """Labelled inputs ``{a_i, f(a_i)}`` with a declared input radius."""

    __slots__ = ("inputs", "labels", "radius")

    def __init__(self, inputs, labels, radius: Optional[float] = None):
        X = np.array(inputs, dtype=np.float64, order="C", copy=True)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        y = np.array(labels, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim != 2 or (X.shape[0] == 0 and radius is None):
            raise InvalidInputError("dataset needs at least one sample (or an explicit radius when empty)")
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        max_norm = float(np.max(np.linalg.norm(X, axis=1), initial=0.0))
        if radius is None:
            radius = max_norm
        radius = float(radius)
        if radius < max_norm * (1.0 - 1e-12):
            raise InvalidInputError(f"radius {radius} is below the largest input norm {max_norm}")
        X.flags.writeable = False
        y.flags.writeable = False
        self.inputs = X
        self.labels = y
        self.radius = radius

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def n0(self) -> int:
        return self.inputs.shape[1]

    @property
    def weight(self) -> float:
        """Per-sample weight ``1/N`` of the mean; 0 for an empty dataset."""
        return 1.0 / self.N if self.N else 0.0

    @classmethod
    def empty(cls, n0: int, radius: float = 1.0) -> "Dataset":
        return cls(np.zeros((0, n0)), np.zeros(0), radius=radius)

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.inputs, axis=1), initial=0.0))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], radius=self.radius)

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
            and self.radius == other.radius
        )

    __hash__ = None

    def __repr__(self):
        return f"Dataset(N={self.N}, n0={self.n0}, radius={self.radius:.6g})"


def _check_compatible(W: Params, n0: int):
    if W.mats[0].shape[0] != n0:
        raise InvalidInputError(f"input dimension {n0} does not match first layer {W.mats[0].shape}")


def default_boundary_tol(W: Params) -> float:
    return 1e-9 * max(1.0, star_norm(W))


def star_norm(W: Params) -> float:
    """Maximum operator 2-norm over the layer matrices."""
    return max(spectral_norm(a) for a in W.mats)


def forward_batch(A, W: Params) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    _check_compatible(W, A.shape[1])
    hs, _ = kernels.forward(A, W.mats)
    return hs[-1][:, 0].copy()


def forward(a, W: Params) -> float:
    """Network output ``y(a, W)`` for a single input vector."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise InvalidInputError("forward expects a single input vector")
    return float(forward_batch(a, W)[0])


def pre_activations(W: Params, A) -> list:
    A = np.ascontiguousarray(A, dtype=np.float64)
    _check_compatible(W, A.shape[1])
    _, zs = kernels.forward(A, W.mats)
    return zs


@dataclass
class SwitchSignature:
    """Per-sample activation patterns for layers ``1..H+1``.

    ``bits[j-1][i, u]`` is 1 iff the pre-activation of unit ``u`` of layer
    ``j`` on sample ``i`` is strictly positive; ``boundary[j-1]`` marks
    pre-activations within the boundary tolerance of zero.
    """

    bits: list
    boundary: list
    tol: float = 0.0
    _masks: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.bits[0].shape[0]

    @property
    def layers(self) -> int:
        return len(self.bits)

    def masks(self) -> list:
        if self._masks is None:
            self._masks = [np.ascontiguousarray(b, dtype=np.float64) for b in self.bits]
        return self._masks

    def for_sample(self, i: int) -> "SwitchSignature":
        return SwitchSignature(
            [b[i:i + 1].copy() for b in self.bits], [b[i:i + 1].copy() for b in self.boundary], self.tol
        )

    @property
    def any_boundary(self) -> bool:
        return any(bool(b.any()) for b in self.boundary)

    def sign_pattern(self) -> list:
        """The ternary sign variant: +1 active, 0 on the boundary, -1 inactive."""
        return [np.where(f, 0, np.where(b, 1, -1)).astype(np.int8) for b, f in zip(self.bits, self.boundary)]

    def key(self) -> bytes:
        """Hashable identity of the bit pattern (boundary flags excluded)."""
        return b"|".join(np.packbits(b.astype(bool)).tobytes() + bytes(str(b.shape), "ascii") for b in self.bits)

    def same_bits(self, other: "SwitchSignature") -> bool:
        return len(self.bits) == len(other.bits) and all(
            np.array_equal(a, b) for a, b in zip(self.bits, other.bits)
        )

    @classmethod
    def constant(cls, arch: Architecture, N: int, value: bool) -> "SwitchSignature":
        bits = [np.full((N, w), bool(value)) for w in arch.widths[1:]]
        return cls(bits, [np.zeros_like(b) for b in bits], 0.0)


def signature_from_inputs(W: Params, A, eps_b: Optional[float] = None) -> SwitchSignature:
    if eps_b is None:
        eps_b = default_boundary_tol(W)
    if eps_b < 0:
        raise InvalidInputError("boundary tolerance must be non-negative")
    zs = pre_activations(W, A)
    return SwitchSignature([z > 0.0 for z in zs], [np.abs(z) <= eps_b for z in zs], float(eps_b))


def switch_signature(W: Params, D: Dataset, eps_b: Optional[float] = None) -> SwitchSignature:
    """Activation signature of ``W`` on every sample of ``D``."""
    return signature_from_inputs(W, D.inputs, eps_b)


def _sample_masks(sig, H: int):
    if isinstance(sig, SwitchSignature):
        if sig.N != 1:
            raise InvalidInputError("pass the signature entry of a single sample (see for_sample)")
        return sig.masks()
    masks = [np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(1, -1)) for b in sig]
    if len(masks) != H + 1:
        raise InvalidInputError(f"expected {H + 1} switch layers, got {len(masks)}")
    return masks


def frozen_forward(a, W: Params, sig) -> float:
    """Output of the linear network obtained by holding the switches at ``sig``."""
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(1, -1))
    _check_compatible(W, a.shape[1])
    masks = _sample_masks(sig, W.H)
    for M, Wk in zip(masks, W.mats):
        if M.shape[1] != Wk.shape[1]:
            raise InvalidInputError("signature shape does not match architecture")
    hs = kernels.frozen_forward(a, W.mats, masks)
    return float(hs[-1][0, 0])


class RegionKind(enum.Enum):
    SMOOTH_ANALYTIC = "SmoothAnalytic"
    SMOOTH_CONSTANT = "SmoothConstant"
    POTENTIALLY_NONSMOOTH = "PotentiallyNonsmooth"


@dataclass(frozen=True)
class RegionClass:
    kind: RegionKind
    witness: Optional[tuple] = None  # (sample, layer, unit)

    def __str__(self):
        return self.kind.value if self.witness is None else f"{self.kind.value} at {self.witness}"


def region_classify(W: Params, D: Dataset, eps_b: Optional[float] = None) -> RegionClass:
    """Smoothness class of the map ``W -> (y(a_i, W))_i`` at ``W``.

    For each sample the lowest layer holding a boundary pre-activation is
    found. If the layer feeding it is entirely switched off (or the input
    itself is zero) the output is locally constant for that sample;
    otherwise the point may be a kink.
    """
    sig = switch_signature(W, D, eps_b)
    first_constant = None
    for i in range(D.N):
        for j in range(sig.layers):
            flags = sig.boundary[j][i]
            if not flags.any():
                continue
            unit = int(np.flatnonzero(flags)[0])
            witness = (i, j + 1, unit)
            if j == 0:
                dead_below = not np.any(D.inputs[i])
            else:
                dead_below = not sig.bits[j - 1][i].any()
            if not dead_below:
                return RegionClass(RegionKind.POTENTIALLY_NONSMOOTH, witness)
            if first_constant is None:
                first_constant = witness
            break
    if first_constant is not None:
        return RegionClass(RegionKind.SMOOTH_CONSTANT, first_constant)
    return RegionClass(RegionKind.SMOOTH_ANALYTIC, None)


def fixture_t1():
    """Hand-checked instance: H=1, widths (2,2,1), a=(1,0.5), f(a)=1, W_0=I, W_1=(1,1)^T."""
    W = Params([np.eye(2), np.ones((2, 1))])
    D = Dataset([[1.0, 0.5]], [1.0])
    return W, D
