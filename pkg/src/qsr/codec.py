"""Shared representation for every structured encoder.

A codec owns ``atoms``, an ``(M, K, sub_dim)`` float32 array. ``sub_dim`` is ``D``
for the residual layout (RVQ family) and ``D / M`` for the product layout (PQ
family). Sparse codecs additionally carry an optional ``(P, M)`` coefficient
codebook. Reconstruction is always ``sum_m w_m * atoms[m, k_m]``, placed either
on the full vector (residual) or on the m-th block (product), where the weights
``w`` are 1 for the plain quantizers, ``a_p`` for quantized coefficients and the
raw weights for the unquantized variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors_io import as_array

KINDS = ("pq", "rvq", "apq", "arvq", "qapq", "qarvq")
LAYOUTS = {"pq": "product", "apq": "product", "qapq": "product",
           "rvq": "residual", "arvq": "residual", "qarvq": "residual"}


def bits_for(n: int) -> int:
    """Whole bits needed to store an index in [0, n)."""
    return int(n - 1).bit_length() if n > 1 else 0


@dataclass
class Codes:
    """Encodings of N vectors.

    ``indices`` is ``(N, M)``. ``p`` holds coefficient codeword indices for the
    quantized sparse codecs, ``alpha`` the raw ``(N, M)`` weights for the
    unquantized ones; both are None for PQ/RVQ.
    """

    indices: np.ndarray
    p: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, sel):
        if isinstance(sel, (int, np.integer)):
            sel = slice(sel, sel + 1)
        return Codes(
            self.indices[sel],
            None if self.p is None else self.p[sel],
            None if self.alpha is None else self.alpha[sel],
        )

    def __eq__(self, other):
        if not isinstance(other, Codes):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return same(self.indices, other.indices) and same(self.p, other.p) and same(self.alpha, other.alpha)

    def batched(self) -> tuple["Codes", bool]:
        """Return a 2-D view of a single code, and whether it was single."""
        if self.indices.ndim == 2:
            return self, False
        return Codes(
            self.indices[None, :],
            None if self.p is None else np.atleast_1d(self.p),
            None if self.alpha is None else self.alpha[None, :],
        ), True

    @staticmethod
    def concat(parts: list["Codes"]) -> "Codes":
        def cat(name):
            arrs = [getattr(c, name) for c in parts]
            return None if arrs[0] is None else np.concatenate(arrs)

        return Codes(np.concatenate([c.indices for c in parts]), cat("p"), cat("alpha"))


# names used in the interface docs
BaseCode = Codes
SparseCode = Codes


class Codec:
    """Base class; subclasses implement ``encode``."""

    kind: str

    def __init__(self, atoms: np.ndarray, coeffs: np.ndarray | None = None):
        atoms = np.asarray(atoms, dtype=np.float32)
        if atoms.ndim != 3:
            raise ValueError(f"atoms must be (M, K, sub_dim), got {atoms.shape}")
        self.atoms = atoms
        self.coeffs = None if coeffs is None else np.asarray(coeffs, dtype=np.float32)
        if self.coeffs is not None and self.coeffs.shape[1] != self.m:
            raise ValueError("coefficient codebook width must equal M")
        self._coeff_norms = None

    # shape ------------------------------------------------------------------
    @property
    def layout(self) -> str:
        return LAYOUTS[self.kind]

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.atoms.shape[2]

    @property
    def dim(self) -> int:
        return self.sub_dim * self.m if self.layout == "product" else self.sub_dim

    @property
    def p(self) -> int:
        return 0 if self.coeffs is None else self.coeffs.shape[0]

    @property
    def alpha_mode(self) -> bool:
        return self.kind in ("apq", "arvq")

    @property
    def coeff_norms(self) -> np.ndarray:
        """Euclidean norms of the coefficient codewords, computed once."""
        if self._coeff_norms is None and self.coeffs is not None:
            self._coeff_norms = np.linalg.norm(self.coeffs.astype(np.float64), axis=1)
        return self._coeff_norms

    def __repr__(self):
        extra = f", P={self.p}" if self.coeffs is not None else ""
        return f"{type(self).__name__}(kind={self.kind!r}, D={self.dim}, M={self.m}, K={self.k}{extra})"

    # helpers ----------------------------------------------------------------
    def _check(self, x) -> tuple[np.ndarray, bool]:
        x = as_array(x)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {x.shape[1]}, codec expects {self.dim}")
        return x, single

    def slices(self, x: np.ndarray):
        """Yield the M column blocks of x (product layout only)."""
        s = self.sub_dim
        for j in range(self.m):
            yield x[:, j * s : (j + 1) * s]

    def weights(self, codes: Codes) -> np.ndarray:
        """Per-atom weights ``(N, M)`` implied by the codes."""
        n = len(codes)
        if codes.alpha is not None:
            return codes.alpha.astype(np.float64)
        if codes.p is not None:
            return self.coeffs[codes.p].astype(np.float64)
        return np.ones((n, self.m))

    # API --------------------------------------------------------------------
    def encode(self, x) -> Codes:
        raise NotImplementedError

    def decode(self, codes: Codes) -> np.ndarray:
        codes, single = codes.batched()
        w = self.weights(codes)
        idx = codes.indices
        n = len(idx)
        if self.layout == "residual":
            out = np.zeros((n, self.dim))
            for j in range(self.m):
                out += w[:, j, None] * self.atoms[j][idx[:, j]]
        else:
            out = np.empty((n, self.dim))
            s = self.sub_dim
            for j in range(self.m):
                out[:, j * s : (j + 1) * s] = w[:, j, None] * self.atoms[j][idx[:, j]]
        return out[0] if single else out

    def _wrap(self, codes: Codes, single: bool) -> Codes:
        if not single:
            return codes
        return Codes(
            codes.indices[0],
            None if codes.p is None else codes.p[0],
            None if codes.alpha is None else codes.alpha[0],
        )


def code_size_bits(codec: Codec, norm_byte: bool = False) -> int:
    """``M * log2 K + log2 P`` with each field rounded up to whole bits.

    Raw weights of the unquantized variants are not counted. ``norm_byte`` adds
    the 8 bits of a stored quantized norm.
    """
    bits = codec.m * bits_for(codec.k)
    if codec.coeffs is not None:
        bits += bits_for(codec.p)
    return bits + (8 if norm_byte else 0)


def make_codec(kind: str, atoms: np.ndarray, coeffs: np.ndarray | None = None) -> Codec:
    """Rebuild a codec object of the given kind from its parameters."""
    from .baselines import PQCodec, RVQCodec
    from .sparse import SparseCodec

    if kind == "pq":
        return PQCodec(atoms)
    if kind == "rvq":
        return RVQCodec(atoms)
    if kind in ("apq", "arvq", "qapq", "qarvq"):
        return SparseCodec(atoms, coeffs, layout=LAYOUTS[kind])
    raise ValueError(f"unknown codec kind {kind!r}")


def learn_codec(kind: str, train, m: int, k: int, p: int = 0, cfg=None) -> Codec:
    """Train any of the six encoders. ``p`` is ignored by pq/rvq/apq/arvq."""
    from .baselines import learn_pq, learn_rvq
    from .sparse import learn_qapq, learn_qarvq

    if kind == "pq":
        return learn_pq(train, m, k, cfg)
    if kind == "rvq":
        return learn_rvq(train, m, k, cfg)
    if kind in ("qapq", "qarvq") and p < 1:
        raise ValueError(f"{kind} needs a coefficient codebook size P >= 1")
    if kind in ("apq", "qapq"):
        return learn_qapq(train, m, k, p if kind == "qapq" else 0, cfg)
    if kind in ("arvq", "qarvq"):
        return learn_qarvq(train, m, k, p if kind == "qarvq" else 0, cfg)
    raise ValueError(f"unknown codec kind {kind!r}")
