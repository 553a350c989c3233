"""Readers and writers for the fvecs / bvecs / ivecs containers, plus dataset helpers.

Every record is a little-endian int32 dimension followed by that many components:
float32 (``f32``, .fvecs), uint8 (``u8``, .bvecs) or int32 (``i32``, .ivecs).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Union

import numpy as np

FORMATS = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "i32": np.dtype("<i4"),
}

_EXTENSIONS = {".fvecs": "f32", ".bvecs": "u8", ".ivecs": "i32"}


class VectorFormatError(ValueError):
    """A vector file is malformed or a dataset cannot be written in the requested format."""


@dataclass(frozen=True)
class Dataset:
    """N x D block of vectors. Row ``i`` has the implicit identifier ``i``."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"dataset must be 2-D, got shape {self.data.shape}")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.count

    def __getitem__(self, item):
        return Dataset(np.atleast_2d(self.data[item]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )


ArrayLike = Union[Dataset, np.ndarray]


def as_array(x: ArrayLike) -> np.ndarray:
    """Return the raw array behind a Dataset, or the argument itself."""
    if isinstance(x, Dataset):
        return x.data
    return np.asarray(x)


def format_from_path(path: str | os.PathLike) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    try:
        return _EXTENSIONS[ext]
    except KeyError:
        raise VectorFormatError(f"cannot infer vector format from extension {ext!r}") from None


def read_vectors(path, fmt: str | None = None) -> Dataset:
    """Load every record of ``path``.

    ``u8`` payloads are widened to float32. An empty file yields a 0 x 0 dataset.
    """
    fmt = fmt or format_from_path(path)
    dtype = FORMATS[fmt]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        out_dtype = np.int32 if fmt == "i32" else np.float32
        return Dataset(np.empty((0, 0), dtype=out_dtype))
    if raw.size < 4:
        raise VectorFormatError(f"{path}: truncated record at byte offset 0")

    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise VectorFormatError(f"{path}: record 0 has non-positive dimension {d}")
    rec = 4 + d * dtype.itemsize
    n = raw.size // rec

    # check headers of complete records before complaining about a short tail,
    # a wrong dimension is the more useful diagnosis
    heads = raw[: n * rec].reshape(n, rec)[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(heads != d)
    if bad.size:
        i = int(bad[0])
        raise VectorFormatError(
            f"{path}: record {i} has dimension {int(heads[i])}, expected {d}"
        )
    if raw.size != n * rec:
        tail_off = n * rec
        if raw.size - tail_off >= 4:
            td = int(raw[tail_off : tail_off + 4].view("<i4")[0])
            if td != d:
                raise VectorFormatError(
                    f"{path}: record {n} has dimension {td}, expected {d}"
                )
        raise VectorFormatError(f"{path}: truncated record at byte offset {tail_off}")

    body = raw.reshape(n, rec)[:, 4:].copy().view(dtype).reshape(n, d)
    if fmt == "u8":
        body = body.astype(np.float32)
    elif fmt == "f32":
        body = body.astype(np.float32)
        if not np.isfinite(body).all():
            raise VectorFormatError(f"{path}: non-finite component")
    else:
        body = body.astype(np.int32)
    return Dataset(body)


def write_vectors(ds: ArrayLike, path, fmt: str | None = None) -> None:
    fmt = fmt or format_from_path(path)
    dtype = FORMATS[fmt]
    x = as_array(ds)
    if x.ndim != 2:
        raise VectorFormatError(f"expected a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if n == 0:
        open(path, "wb").close()
        return

    if fmt == "f32":
        body = x.astype("<f4")
    else:
        info = np.iinfo(dtype)
        if not np.all(np.isfinite(x)) or np.any(x != np.round(x)):
            raise VectorFormatError(f"{fmt} format requires integral components")
        if x.min() < info.min or x.max() > info.max:
            raise VectorFormatError(
                f"{fmt} format requires components in [{info.min}, {info.max}]"
            )
        body = x.astype(dtype)

    rec = np.empty((n, 4 + d * dtype.itemsize), dtype=np.uint8)
    rec[:, :4] = np.array([d], dtype="<i4").view(np.uint8)
    rec[:, 4:] = np.ascontiguousarray(body).view(np.uint8).reshape(n, -1)
    rec.tofile(path)


def l2_normalize(ds: ArrayLike) -> tuple[Dataset, int]:
    """Scale rows to unit norm. Zero rows stay zero; their count is returned."""
    x = as_array(ds).astype(np.float32)
    norms = np.linalg.norm(x.astype(np.float64), axis=1)
    zero = norms == 0
    scale = np.where(zero, 1.0, norms)
    out = (x / scale[:, None]).astype(np.float32)
    return Dataset(out), int(zero.sum())


def synth_dataset(n: int, d: int, model: str = "gaussian", seed: int = 0,
                  centers: int = 10, spread: float = 0.05) -> Dataset:
    """Synthetic float32 data.

    ``gaussian`` draws i.i.d. standard normal rows. ``clustered`` draws ``centers``
    standard normal centers, then adds ``spread``-scaled gaussian noise around a
    uniformly chosen center.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    if n == 0:
        return Dataset(np.empty((0, d), dtype=np.float32))
    if model == "gaussian":
        x = rng.standard_normal((n, d))
    elif model == "clustered":
        c = rng.standard_normal((centers, d))
        which = rng.integers(0, centers, size=n)
        x = c[which] + spread * rng.standard_normal((n, d))
    else:
        raise ValueError(f"unknown model {model!r}")
    return Dataset(x.astype(np.float32))
