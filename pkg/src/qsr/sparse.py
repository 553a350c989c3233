"""Sparse structured encoders with (optionally) vector-quantized weights.

A vector is approximated as ``sum_m alpha_m * c^m_{k_m}`` with one unit atom per
dictionary. In the residual layout the atoms are chosen by a greedy pursuit and
the weights are jointly refit by least squares; in the product layout each block
of D/M coordinates is handled on its own. The weight vector is then replaced by
its nearest codeword in a P-entry coefficient codebook (P=0 keeps raw weights).
"""

from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .clustering import ClusteringConfig, _best_dot, _nearest, kmeans, spherical_kmeans
from .codec import Codec, Codes
from .vectors_io import ArrayLike, as_array

RCOND = 1e-6
_CHUNK = 8192


class CoefficientCodebook(NamedTuple):
    codewords: np.ndarray  # (P, M)
    sq_norms: np.ndarray  # (P,)

    @property
    def p(self) -> int:
        return self.codewords.shape[0]

    @property
    def m(self) -> int:
        return self.codewords.shape[1]


class PursuitResult(NamedTuple):
    indices: np.ndarray  # (N, M)
    weights: np.ndarray  # (N, M) greedy weights
    residual: np.ndarray  # (N, D)


def pursuit(dicts: np.ndarray, x) -> PursuitResult:
    """Greedy one-atom-per-dictionary pursuit.

    At layer m the atom with the largest *signed* inner product with the current
    residual is selected (ties to the lowest index) and its projection removed.
    ``dicts`` is ``(M, K, D)``; ``x`` is ``(D,)`` or ``(N, D)``.
    """
    x = as_array(x)
    single = x.ndim == 1
    r = np.atleast_2d(x).astype(np.float64)
    if r.shape[1] != dicts.shape[2]:
        raise ValueError(f"dimension mismatch: got {r.shape[1]}, dictionaries have {dicts.shape[2]}")
    m = dicts.shape[0]
    idx = np.empty((len(r), m), dtype=np.int64)
    alpha = np.empty((len(r), m))
    for j in range(m):
        sel, val = _best_dot(r, dicts[j])
        idx[:, j] = sel
        alpha[:, j] = val
        r -= val[:, None] * dicts[j][sel]
    if single:
        return PursuitResult(idx[0], alpha[0], r[0])
    return PursuitResult(idx, alpha, r)


def refit_weights(atoms: np.ndarray, x) -> np.ndarray:
    """Least-squares weights over a fixed support, ``pinv(C) @ x``.

    ``atoms`` is ``(D, M)`` or a stack ``(N, D, M)`` matching ``x`` of shape
    ``(N, D)``. Singular values below ``1e-6 * sigma_max`` are dropped, which gives
    the minimum-norm solution when atoms repeat.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if atoms.ndim == 2:
        return np.linalg.pinv(atoms, rcond=RCOND) @ x
    out = np.empty((len(x), atoms.shape[2]))
    for s in range(0, len(x), _CHUNK):
        pinv = np.linalg.pinv(atoms[s : s + _CHUNK], rcond=RCOND)
        out[s : s + _CHUNK] = np.einsum("nmd,nd->nm", pinv, x[s : s + _CHUNK])
    return out


def selected_atoms(dicts: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Stack the chosen atoms into ``(N, D, M)`` matrices C(k)."""
    m = dicts.shape[0]
    return np.stack([dicts[j][indices[:, j]] for j in range(m)], axis=2)


def _refit_all(dicts: np.ndarray, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
    out = np.empty(indices.shape)
    for s in range(0, len(x), _CHUNK):
        c = selected_atoms(dicts, indices[s : s + _CHUNK]).astype(np.float64)
        out[s : s + _CHUNK] = refit_weights(c, x[s : s + _CHUNK])
    return out


class SparseCodec(Codec):
    """alpha-RVQ / Qalpha-RVQ (residual layout) or alpha-PQ / Qalpha-PQ (product layout)."""

    def __init__(self, atoms, coeffs=None, layout: str = "residual"):
        if layout not in ("residual", "product"):
            raise ValueError(f"unknown layout {layout!r}")
        self._layout = layout
        super().__init__(atoms, coeffs)
        norms = np.linalg.norm(self.atoms.astype(np.float64), axis=2)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("dictionary atoms must have unit norm")

    @property
    def kind(self) -> str:
        base = "rvq" if self._layout == "residual" else "pq"
        return ("qa" if self.coeffs is not None else "a") + base

    @property
    def coefficient_codebook(self) -> CoefficientCodebook | None:
        if self.coeffs is None:
            return None
        return CoefficientCodebook(self.coeffs, self.coeff_norms**2)

    def raw_weights(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Atom indices and unquantized weights for a batch."""
        x64 = x.astype(np.float64)
        if self._layout == "residual":
            res = pursuit(self.atoms, x64)
            return res.indices, _refit_all(self.atoms, x64, res.indices)
        idx = np.empty((len(x), self.m), dtype=np.int64)
        alpha = np.empty((len(x), self.m))
        for j, xs in enumerate(self.slices(x64)):
            idx[:, j], alpha[:, j] = _best_dot(xs, self.atoms[j])
        return idx, alpha

    def quantize_weights(self, alpha: np.ndarray) -> np.ndarray:
        """Index of the nearest coefficient codeword, ties to the lowest index."""
        return _nearest(alpha, self.coeffs)[0]

    def encode(self, x) -> Codes:
        x, single = self._check(x)
        idx, alpha = self.raw_weights(x)
        if self.coeffs is None:
            codes = Codes(idx, alpha=alpha.astype(np.float32))
        else:
            codes = Codes(idx, p=self.quantize_weights(alpha))
        return self._wrap(codes, single)


def _coefficient_codebook(alpha: np.ndarray, p: int, cfg: ClusteringConfig):
    if p == 0:
        return None
    if p > len(alpha):
        raise ValueError(f"P={p} exceeds the number of training vectors {len(alpha)}")
    return kmeans(alpha, p, replace(cfg, seed=cfg.seed + 1000)).centers


def learn_qarvq(train: ArrayLike, m: int, k: int, p: int,
                cfg: ClusteringConfig | None = None) -> SparseCodec:
    """Learn M residual dictionaries by spherical k-means, then the weight codebook.

    Each layer's dictionary is fit on the current training residuals, which are
    then updated greedily with it. Weights are refit per training vector on the
    final support and clustered into P codewords (P=0: keep raw weights).
    """
    cfg = cfg or ClusteringConfig()
    z = as_array(train).astype(np.float64)
    if p > len(z):
        raise ValueError(f"P={p} exceeds the number of training vectors {len(z)}")
    r = z.copy()
    dicts = []
    idx = np.empty((len(z), m), dtype=np.int64)
    for j in range(m):
        c = spherical_kmeans(r, k, replace(cfg, seed=cfg.seed + j)).centers
        dicts.append(c)
        sel, val = _best_dot(r, c)
        idx[:, j] = sel
        r -= val[:, None] * c[sel]
    atoms = np.stack(dicts)
    alpha = _refit_all(atoms, z, idx)
    return SparseCodec(atoms, _coefficient_codebook(alpha, p, cfg), layout="residual")


def learn_qapq(train: ArrayLike, m: int, k: int, p: int,
               cfg: ClusteringConfig | None = None) -> SparseCodec:
    """Spherical k-means per block of D/M coordinates, then the weight codebook."""
    cfg = cfg or ClusteringConfig()
    z = as_array(train).astype(np.float64)
    d = z.shape[1]
    if m < 1 or d % m:
        raise ValueError(f"M={m} must divide D={d}")
    if p > len(z):
        raise ValueError(f"P={p} exceeds the number of training vectors {len(z)}")
    s = d // m
    dicts = []
    alpha = np.empty((len(z), m))
    for j in range(m):
        zs = z[:, j * s : (j + 1) * s]
        c = spherical_kmeans(zs, k, replace(cfg, seed=cfg.seed + j)).centers
        dicts.append(c)
        alpha[:, j] = _best_dot(zs, c)[1]
    atoms = np.stack(dicts)
    return SparseCodec(atoms, _coefficient_codebook(alpha, p, cfg), layout="product")


def encode_qarvq(codec: SparseCodec, x) -> Codes:
    return codec.encode(x)


def decode_qarvq(codec: SparseCodec, code: Codes) -> np.ndarray:
    return codec.decode(code)


def encode_qapq(codec: SparseCodec, x) -> Codes:
    return codec.encode(x)


def decode_qapq(codec: SparseCodec, code: Codes) -> np.ndarray:
    return codec.decode(code)
