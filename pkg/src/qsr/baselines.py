"""Product quantization and residual vector quantization.

Both reconstruct a vector as a plain sum of M codewords, one per codebook.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .clustering import ClusteringConfig, _nearest, kmeans
from .codec import Codec, Codes
from .vectors_io import ArrayLike, as_array


class PQCodec(Codec):
    """M independent k-means codebooks over consecutive blocks of D/M coordinates."""

    kind = "pq"

    def encode(self, x) -> Codes:
        x, single = self._check(x)
        idx = np.empty((len(x), self.m), dtype=np.int64)
        for j, xs in enumerate(self.slices(x)):
            idx[:, j] = _nearest(xs, self.atoms[j])[0]
        return self._wrap(Codes(idx), single)


class RVQCodec(Codec):
    """M full-dimension codebooks applied greedily to the running residual."""

    kind = "rvq"

    def encode(self, x) -> Codes:
        x, single = self._check(x)
        r = x.astype(np.float64)
        idx = np.empty((len(x), self.m), dtype=np.int64)
        for j in range(self.m):
            sel = _nearest(r, self.atoms[j])[0]
            idx[:, j] = sel
            r -= self.atoms[j][sel]
        return self._wrap(Codes(idx), single)


def learn_pq(train: ArrayLike, m: int, k: int, cfg: ClusteringConfig | None = None) -> PQCodec:
    cfg = cfg or ClusteringConfig()
    x = as_array(train)
    d = x.shape[1]
    if m < 1 or d % m:
        raise ValueError(f"M={m} must divide D={d}")
    s = d // m
    atoms = np.stack([
        kmeans(x[:, j * s : (j + 1) * s], k, replace(cfg, seed=cfg.seed + j)).centers
        for j in range(m)
    ])
    return PQCodec(atoms)


def learn_rvq(train: ArrayLike, m: int, k: int, cfg: ClusteringConfig | None = None) -> RVQCodec:
    """Layer j is k-means on the residuals left by layers 1..j-1."""
    cfg = cfg or ClusteringConfig()
    r = as_array(train).astype(np.float64)
    layers = []
    for j in range(m):
        cb = kmeans(r, k, replace(cfg, seed=cfg.seed + j)).centers
        layers.append(cb)
        r -= cb[_nearest(r, cb)[0]]
    return RVQCodec(np.stack(layers))


def encode_pq(codec: PQCodec, x) -> Codes:
    return codec.encode(x)


def decode_pq(codec: PQCodec, code: Codes) -> np.ndarray:
    return codec.decode(code)


def encode_rvq(codec: RVQCodec, x) -> Codes:
    return codec.encode(x)


def decode_rvq(codec: RVQCodec, code: Codes) -> np.ndarray:
    return codec.decode(code)
