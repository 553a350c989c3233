"""Asymmetric scoring of encoded vectors against an uncompressed query.

For a query ``y`` the inner products between ``y`` and every atom are tabulated
once; the inner product with any encoded vector is then a weighted sum of M
table entries. The norm of the approximation comes either from the Gram matrix
of the atoms (exact), from one stored byte (quantized norm) or, for the product
layout, directly from the weights since blocks are orthogonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .clustering import ClusteringConfig, kmeans
from .codec import Codec, Codes
from .vectors_io import ArrayLike, as_array

NORM_LEVELS = 256
QUANTIZED_NORM_THRESHOLD = 1_000_000


class Hits(NamedTuple):
    ids: np.ndarray
    scores: np.ndarray
    n_candidates: int


def build_lookup(codec: Codec, y) -> np.ndarray:
    """``(M, K)`` table of inner products between the query and every atom."""
    y = np.asarray(as_array(y), dtype=np.float64)
    if y.shape != (codec.dim,):
        raise ValueError(f"query dimension {y.shape} does not match codec dimension {codec.dim}")
    if codec.layout == "residual":
        return np.einsum("mkd,d->mk", codec.atoms.astype(np.float64), y)
    s = codec.sub_dim
    return np.einsum("mkd,md->mk", codec.atoms.astype(np.float64), y.reshape(codec.m, s))


def score_numerator(table: np.ndarray, codes: Codes, codec: Codec) -> np.ndarray:
    """``y^T Q(x)`` for every code: M look-ups, weighted and summed."""
    codes, single = codes.batched()
    idx = codes.indices
    m = table.shape[0]
    gathered = table[np.arange(m)[None, :], idx]
    if codes.p is None and codes.alpha is None:
        out = gathered.sum(axis=1)
    else:
        out = np.einsum("nm,nm->n", gathered, codec.weights(codes))
    return out[0] if single else out


class GramTable:
    """All atom-to-atom inner products, kept as an ``(M, K, M, K)`` array."""

    def __init__(self, codec: Codec):
        a = codec.atoms.astype(np.float64)
        if codec.layout == "product":
            # blocks are orthogonal: only diagonal blocks are non-zero
            m, k, _ = a.shape
            g = np.zeros((m, k, m, k))
            for j in range(m):
                g[j, :, j, :] = a[j] @ a[j].T
        else:
            g = np.einsum("akd,bld->akbl", a, a)
        self.table = g

    def sq_norms(self, codes: Codes, weights: np.ndarray) -> np.ndarray:
        """``sum_{m,n} w_m w_n <c^m_{k_m}, c^n_{k_n}>`` for every code."""
        idx = codes.indices
        m = idx.shape[1]
        out = np.zeros(len(idx))
        for a in range(m):
            out += weights[:, a] ** 2 * self.table[a, idx[:, a], a, idx[:, a]]
            for b in range(a + 1, m):
                out += 2.0 * weights[:, a] * weights[:, b] * self.table[a, idx[:, a], b, idx[:, b]]
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class NormQuantizer:
    """Non-uniform scalar quantizer with 256 ascending levels."""

    levels: np.ndarray

    def quantize(self, norms) -> np.ndarray:
        norms = np.asarray(norms, dtype=np.float64)
        lv = self.levels.astype(np.float64)
        # nearest level; midpoints between neighbours decide, ties go low
        mids = (lv[1:] + lv[:-1]) / 2
        return np.searchsorted(mids, norms, side="left").astype(np.uint8)

    def dequantize(self, codes) -> np.ndarray:
        return self.levels.astype(np.float64)[np.asarray(codes, dtype=np.int64)]

    def max_half_gap(self) -> float:
        return float(np.max(np.diff(self.levels.astype(np.float64)), initial=0.0) / 2)


def learn_norm_quantizer(norms, cfg: ClusteringConfig | None = None) -> NormQuantizer:
    """1-D k-means with 256 centroids over norm samples.

    With 256 or fewer distinct values the levels are exactly those values; the
    list is padded to 256 entries by repeating the largest one.
    """
    v = np.asarray(norms, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot learn a norm quantizer from an empty sample")
    distinct = np.unique(v)
    if distinct.size <= NORM_LEVELS:
        levels = distinct
    else:
        cb = kmeans(v[:, None], NORM_LEVELS, cfg or ClusteringConfig())
        levels = np.sort(cb.centers[:, 0].astype(np.float64))
    levels = np.concatenate([levels, np.full(NORM_LEVELS - levels.size, levels[-1])])
    return NormQuantizer(levels.astype(np.float32))


def norm_of_code(codes: Codes, codec: Codec, method: str = "gram", gram: GramTable | None = None,
                 norm_bytes=None, quantizer: NormQuantizer | None = None) -> np.ndarray:
    """Euclidean norm of the reconstruction of every code, without decoding.

    ``gram``: exact via atom inner products. ``quantized``: the stored byte mapped
    back through ``quantizer``. ``product_fast``: block orthogonality, e.g. the
    norm of the coefficient codeword for Qalpha-PQ.
    """
    codes, single = codes.batched()
    if method == "gram":
        if codec.layout == "product":
            warnings.warn("gram norms on a product-layout codec; product_fast is exact and cheaper",
                          stacklevel=2)
        gram = gram or GramTable(codec)
        out = np.sqrt(gram.sq_norms(codes, codec.weights(codes)))
    elif method == "quantized":
        if norm_bytes is None or quantizer is None:
            raise RuntimeError("quantized norms requested but no norm bytes are stored")
        out = quantizer.dequantize(norm_bytes)
    elif method == "product_fast":
        if codec.layout != "product":
            raise ValueError("product_fast norms need a product-layout codec")
        if codes.p is not None:
            out = codec.coeff_norms[codes.p]
        elif codes.alpha is not None:
            # unit atoms: the block norm is |alpha_m|
            out = np.linalg.norm(codes.alpha.astype(np.float64), axis=1)
        else:
            sq = np.einsum("mkd,mkd->mk", codec.atoms.astype(np.float64), codec.atoms.astype(np.float64))
            out = np.sqrt(sq[np.arange(codec.m)[None, :], codes.indices].sum(axis=1))
    else:
        raise ValueError(f"unknown norm method {method!r}")
    return out[0] if single else out


def top_r(scores: np.ndarray, ids: np.ndarray, r: int, largest: bool) -> np.ndarray:
    """Positions of the best ``r`` scores, best first; equal scores rank the lower id first."""
    key = -scores if largest else scores
    n = len(key)
    if r <= 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if n > r:
        kth = np.partition(key, r - 1)[r - 1]
        cand = np.flatnonzero(key <= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], key[cand]))
    return cand[order[:r]]


def resolve_norm_mode(codec: Codec, norm_mode: str, n: int) -> str:
    if norm_mode == "auto":
        if codec.layout == "product":
            return "product_fast"
        return "quantized" if n >= QUANTIZED_NORM_THRESHOLD else "gram"
    if norm_mode == "quantized" and codec.layout != "residual":
        raise ValueError("quantized norm bytes are only stored for residual-layout codecs")
    if norm_mode not in ("gram", "quantized", "product_fast"):
        raise ValueError(f"unknown norm mode {norm_mode!r}")
    return norm_mode


def score_codes(codec: Codec, table: np.ndarray, codes: Codes, norms: np.ndarray,
                metric: str, y_sqnorm: float) -> np.ndarray:
    """Cosine similarity (larger is better) or squared distance (smaller is better)."""
    num = score_numerator(table, codes, codec)
    if metric == "cosine":
        safe = np.where(norms > 0, norms, 1.0)
        return np.where(norms > 0, num / safe, 0.0)
    if metric == "euclidean":
        return y_sqnorm + norms**2 - 2.0 * num
    raise ValueError(f"unknown metric {metric!r}")


class FlatIndex:
    """Codes for N database vectors scanned exhaustively at query time.

    ``norms`` caches the reconstruction norms used for scoring: exact ones from the
    Gram table or block structure, or the dequantized stored bytes.
    """

    def __init__(self, codec: Codec, codes: Codes, metric: str = "euclidean", norm_mode: str = "auto",
                 norm_bytes=None, norm_quantizer: NormQuantizer | None = None):
        if metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {metric!r}")
        self.codec = codec
        self.codes = codes
        self.metric = metric
        self.norm_mode = resolve_norm_mode(codec, norm_mode, len(codes))
        self.norm_quantizer = norm_quantizer
        self.norm_bytes = None if norm_bytes is None else np.asarray(norm_bytes, dtype=np.uint8)
        if self.norm_mode == "quantized":
            if self.norm_bytes is None or norm_quantizer is None:
                raise ValueError("quantized norm mode needs norm bytes and their quantizer")
        self.norms = code_norms(codec, codes, self.norm_mode, self.norm_bytes, norm_quantizer)

    def __len__(self):
        return len(self.codes)


def code_norms(codec, codes, norm_mode, norm_bytes=None, quantizer=None) -> np.ndarray:
    if len(codes) == 0:
        return np.empty(0)
    if norm_mode == "gram":
        return norm_of_code(codes, codec, "gram")
    return norm_of_code(codes, codec, norm_mode, norm_bytes=norm_bytes, quantizer=quantizer)


def exact_norms(codec: Codec, codes: Codes) -> np.ndarray:
    mode = "product_fast" if codec.layout == "product" else "gram"
    return code_norms(codec, codes, mode)


def build_flat(codec: Codec, base: ArrayLike, metric: str = "euclidean", norm_mode: str = "auto",
               norm_quantizer: NormQuantizer | None = None, train: ArrayLike | None = None) -> FlatIndex:
    """Encode ``base`` and wrap the codes for exhaustive asymmetric search.

    In quantized norm mode the quantizer is learned on the reconstruction norms of
    ``train`` (falling back to ``base``) unless one is supplied.
    """
    x = as_array(base)
    codes = codec.encode(x)
    mode = resolve_norm_mode(codec, norm_mode, len(x))
    norm_bytes = None
    if mode == "quantized":
        if norm_quantizer is None:
            sample = codes if train is None else codec.encode(as_array(train))
            norm_quantizer = learn_norm_quantizer(exact_norms(codec, sample))
        norm_bytes = norm_quantizer.quantize(exact_norms(codec, codes))
    return FlatIndex(codec, codes, metric, mode, norm_bytes, norm_quantizer)


def search_flat(index: FlatIndex, y, r: int, norms: np.ndarray | None = None) -> Hits:
    """Exact top-``r`` over the approximate scores of every stored code.

    ``norms`` overrides the index's reconstruction norms.
    """
    if r < 1:
        raise ValueError("R must be >= 1")
    y = np.asarray(as_array(y), dtype=np.float64)
    table = build_lookup(index.codec, y)
    nrm = index.norms if norms is None else np.asarray(norms, dtype=np.float64)
    scores = score_codes(index.codec, table, index.codes, nrm, index.metric, float(y @ y))
    ids = np.arange(len(index.codes))
    best = top_r(scores, ids, r, largest=index.metric == "cosine")
    return Hits(ids[best], scores[best], len(ids))


def search_batch(search_fn, queries: ArrayLike, r: int, **kwargs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run ``search_fn(y, r, **kwargs)`` per query and pad results to width ``r`` with id -1."""
    q = as_array(queries)
    ids = np.full((len(q), r), -1, dtype=np.int64)
    scores = np.full((len(q), r), np.nan)
    counts = np.zeros(len(q), dtype=np.int64)
    for i, y in enumerate(q):
        hits = search_fn(y, r, **kwargs)
        n = len(hits.ids)
        ids[i, :n] = hits.ids
        scores[i, :n] = hits.scores
        counts[i] = hits.n_candidates
    return ids, scores, counts
