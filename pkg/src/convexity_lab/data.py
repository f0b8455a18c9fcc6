"""Dataset generation, CSV/IDX ingestion and radius normalization."""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import FormatError, InvalidInputError, ParseError
from .net import Architecture, Dataset, Params, forward_batch, init_params

IDX_IMAGES = 2051
IDX_LABELS = 2049

PathLike = Union[str, Path]


@dataclass(frozen=True)
class TeacherSpec:
    arch: Architecture
    scale: float = 1.0
    noise: float = 0.0
    N: int = 32
    seed: int = 0
    radius: float = 1.0

    def __post_init__(self):
        if isinstance(self.arch, str):
            object.__setattr__(self, "arch", Architecture.parse(self.arch))
        if not self.scale > 0:
            raise InvalidInputError(f"teacher scale must be positive, got {self.scale}")
        if not self.noise >= 0:
            raise InvalidInputError(f"noise must be >= 0, got {self.noise}")
        if int(self.N) < 1:
            raise InvalidInputError(f"need N >= 1, got {self.N}")
        if not self.radius > 0:
            raise InvalidInputError(f"radius must be positive, got {self.radius}")


def _teacher_streams(spec: TeacherSpec):
    # independent child streams so the teacher weights do not depend on N
    ss = np.random.SeedSequence(spec.seed)
    w_ss, x_ss, n_ss = ss.spawn(3)
    return np.random.default_rng(w_ss), np.random.default_rng(x_ss), np.random.default_rng(n_ss)


def teacher_params(spec: TeacherSpec) -> Params:
    return init_params(spec.arch, _teacher_streams(spec)[0], scale=spec.scale)


def gen_teacher(spec: TeacherSpec) -> Dataset:
    """Gaussian inputs scaled so the largest norm is ``spec.radius``, teacher labels plus noise."""
    w_rng, x_rng, n_rng = _teacher_streams(spec)
    W = init_params(spec.arch, w_rng, scale=spec.scale)
    X = x_rng.standard_normal((spec.N, spec.arch.widths[0]))
    X *= spec.radius / np.max(np.linalg.norm(X, axis=1))
    y = forward_batch(X, W)
    if spec.noise > 0:
        y = y + spec.noise * n_rng.standard_normal(spec.N)
    return Dataset(X, y, radius=spec.radius)


def normalize_radius(D: Dataset, r_target: float) -> Dataset:
    if not r_target > 0:
        raise InvalidInputError(f"target radius must be positive, got {r_target}")
    if D.N == 0:
        raise InvalidInputError("cannot normalize an empty dataset")
    mx = D.max_norm
    if mx == 0.0:
        raise InvalidInputError("all inputs are zero; radius is undefined")
    if mx == r_target:
        return Dataset(D.inputs, D.labels, radius=float(r_target))
    return Dataset(D.inputs * (r_target / mx), D.labels, radius=float(r_target))


def load_csv(path: PathLike, n0: Optional[int] = None, header: bool = False,
             radius: Optional[float] = None) -> Dataset:
    """Rows of ``n0`` features followed by the label."""
    rows = []
    width = None if n0 is None else n0 + 1
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not f.strip() for f in rec):
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise ParseError("need at least one feature and a label", lineno)
            if len(rec) != width:
                raise ParseError(f"expected {width} fields, got {len(rec)}", lineno)
            try:
                rows.append([float(f) for f in rec])
            except ValueError as e:
                raise ParseError(f"non-numeric field: {e}", lineno) from None
    if not rows:
        raise ParseError("no data rows", 0)
    arr = np.array(rows, dtype=np.float64)
    try:
        return Dataset(arr[:, :-1], arr[:, -1], radius=radius)
    except InvalidInputError as e:
        raise ParseError(str(e), 0) from None


def write_csv(D: Dataset, path: PathLike, header: bool = False):
    buf = io.StringIO()
    if header:
        buf.write(",".join([f"x{j}" for j in range(D.n0)] + ["label"]) + "\n")
    for a, f in zip(D.inputs, D.labels):
        buf.write(",".join("%.17g" % v for v in (*a, f)) + "\n")
    Path(path).write_text(buf.getvalue())


def _read_idx(path: PathLike, magic: int, name: str):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{name}: file too short for an IDX header", len(raw))
    got = struct.unpack(">i", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{name}: magic {got}, expected {magic}", 0)
    ndim = raw[3]
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise FormatError(f"{name}: truncated dimension header", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:hdr])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < hdr + size:
        raise FormatError(f"{name}: truncated payload, need {size} bytes", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=hdr)
    return data.reshape(dims)


def load_idx(images: PathLike, labels: PathLike, limit: Optional[int] = None,
             target: int = 0) -> Dataset:
    """IDX images (magic 2051) and labels (magic 2049); label 1 iff digit == target."""
    X = _read_idx(images, IDX_IMAGES, "images")
    y = _read_idx(labels, IDX_LABELS, "labels")
    if X.ndim < 2 or y.ndim != 1:
        raise FormatError("unexpected IDX dimensions", 3)
    if X.shape[0] != y.shape[0]:
        raise FormatError(f"{X.shape[0]} images but {y.shape[0]} labels", 4)
    n = X.shape[0] if limit is None else min(int(limit), X.shape[0])
    A = X[:n].reshape(n, -1).astype(np.float64) / 255.0
    f = (y[:n] == target).astype(np.float64)
    return Dataset(A, f)


def write_idx(images_path: PathLike, labels_path: PathLike, images: np.ndarray, labels: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    hdr = struct.pack(">i", IDX_IMAGES) + struct.pack(">" + "I" * images.ndim, *images.shape)
    Path(images_path).write_bytes(hdr + images.tobytes())
    hdr = struct.pack(">i", IDX_LABELS) + struct.pack(">I", labels.shape[0])
    Path(labels_path).write_bytes(hdr + labels.tobytes())


def save_weights(W: Params, path: PathLike):
    np.savez(path, **{f"W{i}": M for i, M in enumerate(W.mats)})


def load_weights(path: PathLike, arch: Optional[Architecture] = None) -> Params:
    try:
        with np.load(path) as z:
            keys = sorted((k for k in z.files if k.startswith("W")), key=lambda k: int(k[1:]))
            mats = [z[k] for k in keys]
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read weights: {e}", 0) from None
    if not mats:
        raise FormatError("weight file has no W0..WH arrays", 0)
    W = Params(mats)
    if arch is not None and W.arch != arch:
        raise InvalidInputError(f"weights have architecture {W.arch}, expected {arch}")
    return W
