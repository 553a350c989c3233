"""Inverted-file index over coarse-quantization residuals.

Each database vector goes to its nearest coarse centroid; the residual to that
centroid is encoded and appended to the centroid's posting list. A query scans
the ``wc`` lists whose centroids are closest, scoring each with its own query
residual. For residual sparse codecs, ``wprime`` additionally skips entries
whose first-layer atom is not among the ``wprime`` atoms most correlated with
the query residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .clustering import ClusteringConfig, Codebook, _nearest, kmeans
from .codec import Codec, Codes, learn_codec
from .search import (
    Hits,
    NormQuantizer,
    build_lookup,
    code_norms,
    exact_norms,
    learn_norm_quantizer,
    score_codes,
    top_r,
)
from .vectors_io import ArrayLike, as_array


class UnsupportedOperationError(RuntimeError):
    """The operation does not apply to this kind of codec."""


class CodecSpec(NamedTuple):
    kind: str
    m: int
    k: int
    p: int = 0


@dataclass
class PostingList:
    ids: np.ndarray  # int64, ascending
    codes: Codes
    norm_bytes: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)


class IVFIndex:
    def __init__(self, coarse: Codebook, codec: Codec, lists: list[PostingList], norm_mode: str,
                 norm_quantizer: NormQuantizer | None = None):
        if len(lists) != coarse.k:
            raise ValueError("one posting list per coarse centroid is required")
        self.coarse = coarse
        self.codec = codec
        self.lists = lists
        self.norm_mode = norm_mode
        self.norm_quantizer = norm_quantizer
        self.metric = "euclidean"
        self._norms = [code_norms(codec, pl.codes, norm_mode, pl.norm_bytes, norm_quantizer)
                       for pl in lists]

    @property
    def kc(self) -> int:
        return self.coarse.k

    @property
    def n(self) -> int:
        return sum(len(pl) for pl in self.lists)

    def list_sizes(self) -> np.ndarray:
        return np.array([len(pl) for pl in self.lists], dtype=np.int64)

    def list_norms(self, j: int) -> np.ndarray:
        return self._norms[j]

    def closest_lists(self, y: np.ndarray, wc: int) -> np.ndarray:
        c = self.coarse.centers.astype(np.float64)
        d = np.sum((c - y) ** 2, axis=1)
        return np.lexsort((np.arange(len(d)), d))[:wc]


def build_ivf(train: ArrayLike, base: ArrayLike, kc: int, codec_spec: CodecSpec,
              cfg: ClusteringConfig | None = None, norm_mode: str = "auto") -> IVFIndex:
    """Coarse k-means on ``train``, codec learned on train residuals, base encoded per list.

    ``norm_mode="auto"`` stores a quantized norm byte for residual-layout codecs and
    uses exact block norms for product-layout ones.
    """
    cfg = cfg or ClusteringConfig()
    z = as_array(train)
    x = as_array(base)
    if kc < 1 or kc > len(z):
        raise ValueError(f"kc={kc} must be in [1, {len(z)}]")
    coarse = kmeans(z, kc, cfg)
    c = coarse.centers.astype(np.float64)
    z_assign = _nearest(z, coarse.centers)[0]
    z_res = z.astype(np.float64) - c[z_assign]
    codec = learn_codec(codec_spec.kind, z_res, codec_spec.m, codec_spec.k, codec_spec.p, cfg)

    if norm_mode == "auto":
        norm_mode = "quantized" if codec.layout == "residual" else "product_fast"
    quantizer = None
    if norm_mode == "quantized":
        if codec.layout != "residual":
            raise ValueError("quantized norm bytes are only stored for residual-layout codecs")
        quantizer = learn_norm_quantizer(exact_norms(codec, codec.encode(z_res)))

    x_assign = _nearest(x, coarse.centers)[0]
    order = np.argsort(x_assign, kind="stable")
    bounds = np.searchsorted(x_assign[order], np.arange(kc + 1))
    lists = []
    for j in range(kc):
        ids = order[bounds[j] : bounds[j + 1]].astype(np.int64)
        codes = codec.encode(x[ids].astype(np.float64) - c[j]) if len(ids) else _empty_codes(codec)
        nb = None
        if quantizer is not None:
            nb = quantizer.quantize(exact_norms(codec, codes)) if len(ids) else np.empty(0, np.uint8)
        lists.append(PostingList(ids, codes, nb))
    return IVFIndex(coarse, codec, lists, norm_mode, quantizer)


def _empty_codes(codec: Codec) -> Codes:
    idx = np.empty((0, codec.m), dtype=np.int64)
    if codec.coeffs is not None:
        return Codes(idx, p=np.empty(0, dtype=np.int64))
    if codec.alpha_mode:
        return Codes(idx, alpha=np.empty((0, codec.m), dtype=np.float32))
    return Codes(idx)


def _scan(index: IVFIndex, y, r: int, wc: int, wprime: int | None) -> Hits:
    if not 1 <= wc <= index.kc:
        raise ValueError(f"wc={wc} must be in [1, {index.kc}]")
    if r < 1:
        raise ValueError("R must be >= 1")
    y = np.asarray(as_array(y), dtype=np.float64)
    codec = index.codec
    all_ids, all_scores = [], []
    scanned = 0
    for j in index.closest_lists(y, wc):
        pl = index.lists[j]
        if not len(pl):
            continue
        yr = y - index.coarse.centers[j].astype(np.float64)
        table = build_lookup(codec, yr)
        codes, norms, ids = pl.codes, index.list_norms(j), pl.ids
        if wprime is not None and wprime < codec.k:
            keep_atoms = np.zeros(codec.k, dtype=bool)
            keep_atoms[np.lexsort((np.arange(codec.k), -table[0]))[:wprime]] = True
            keep = keep_atoms[codes.indices[:, 0]]
            codes, norms, ids = codes[keep], norms[keep], ids[keep]
        scanned += len(ids)
        all_scores.append(score_codes(codec, table, codes, norms, "euclidean", float(yr @ yr)))
        all_ids.append(ids)
    if not all_ids:
        return Hits(np.empty(0, np.int64), np.empty(0), 0)
    ids = np.concatenate(all_ids)
    scores = np.concatenate(all_scores)
    best = top_r(scores, ids, r, largest=False)
    return Hits(ids[best], scores[best], scanned)


def search_ivf(index: IVFIndex, y, r: int, wc: int) -> Hits:
    """Top-``r`` squared distances over the ``wc`` nearest posting lists."""
    return _scan(index, y, r, wc, None)


def search_ivf_pruned(index: IVFIndex, y, r: int, wc: int, wprime: int) -> Hits:
    """Like ``search_ivf``, keeping only entries whose first atom is among the query's top ``wprime``.

    The atom ranking is recomputed for every scanned list from that list's query residual.
    """
    if index.codec.kind not in ("arvq", "qarvq"):
        raise UnsupportedOperationError(
            f"first-layer pruning needs a residual sparse codec, not {index.codec.kind!r}")
    if not 1 <= wprime <= index.codec.k:
        raise ValueError(f"wprime={wprime} must be in [1, {index.codec.k}]")
    return _scan(index, y, r, wc, wprime)
