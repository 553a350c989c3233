"""Lloyd k-means and spherical k-means.

Both variants start from ``k`` distinct training points drawn with the run's seed
and fix dead clusters by splitting the most populated one (or re-seeding from a
random point). Assignments break ties towards the lowest center index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .vectors_io import ArrayLike, as_array

log = logging.getLogger(__name__)

_CHUNK = 1 << 15


@dataclass(frozen=True)
class ClusteringConfig:
    iterations: int = 25
    seed: int = 0
    empty_policy: str = "split_largest"  # or "reinit_random"
    tolerance: float = 1e-4
    restarts: int = 1  # independent random-selection inits; the best run is kept

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.empty_policy not in ("split_largest", "reinit_random"):
            raise ValueError(f"unknown empty_policy {self.empty_policy!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class Codebook:
    """K centers. ``kind == "spherical"`` means unit-norm atoms matched by inner product.

    ``history`` holds the objective measured at every assignment step: mean squared
    distortion for euclidean codebooks, summed inner product for spherical ones.
    """

    centers: np.ndarray
    kind: str = "euclidean"
    history: list = field(default_factory=list, compare=False)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _nearest(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and squared distance of the nearest center, per row of x.

    Candidates are found with the expanded form; rows whose best candidates are
    within rounding of each other are re-scored directly so ties go to the lowest index.
    """
    c64 = c.astype(np.float64)
    cn = np.einsum("ij,ij->i", c64, c64)
    idx = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x), dtype=np.float64)
    for s in range(0, len(x), _CHUNK):
        xb = x[s : s + _CHUNK].astype(np.float64)
        d2 = cn[None, :] - 2.0 * (xb @ c64.T)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(xb))
        best = d2[rows, j]
        xn = np.einsum("ij,ij->i", xb, xb)
        slack = 1e-9 * (xn + np.abs(best) + cn[j] + 1e-30)
        d2[rows, j] = np.inf
        close = np.flatnonzero(d2.min(axis=1) <= best + slack) if d2.shape[1] > 1 else []
        for i in close:
            d2[i, j[i]] = best[i]
            cand = np.flatnonzero(d2[i] <= best[i] + slack[i])
            exact = np.sum((c64[cand] - xb[i]) ** 2, axis=1)
            j[i] = cand[np.argmin(exact)]
        idx[s : s + _CHUNK] = j
        diff = xb - c64[j]
        dist[s : s + _CHUNK] = np.einsum("ij,ij->i", diff, diff)
    return idx, dist


def _best_dot(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and value of the largest signed inner product, per row of x."""
    c64 = c.astype(np.float64)
    idx = np.empty(len(x), dtype=np.int64)
    val = np.empty(len(x), dtype=np.float64)
    for s in range(0, len(x), _CHUNK):
        ip = x[s : s + _CHUNK].astype(np.float64) @ c64.T
        j = np.argmax(ip, axis=1)
        idx[s : s + _CHUNK] = j
        val[s : s + _CHUNK] = ip[np.arange(len(j)), j]
    return idx, val


def assign(points: ArrayLike, cb: Codebook) -> np.ndarray:
    x = as_array(points)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != cb.dim:
        raise ValueError(f"dimension mismatch: points have {x.shape[1]}, codebook {cb.dim}")
    if cb.kind == "spherical":
        return _best_dot(x, cb.centers)[0]
    return _nearest(x, cb.centers)[0]


def _init_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    pick = rng.choice(len(x), size=k, replace=False)
    pick.sort()
    return x[pick].astype(np.float64)


def _fix_empty(centers, counts, labels, x, rng, cfg, spherical):
    """Replace centers that own no points (or a zero-sum of points when spherical)."""
    dead = np.flatnonzero(counts == 0)
    for j in dead:
        if cfg.empty_policy == "reinit_random":
            new = x[rng.integers(len(x))].astype(np.float64)
        else:
            big = int(np.argmax(counts))
            if spherical:
                scale = 1e-3
            else:
                members = x[labels == big].astype(np.float64)
                spread = np.sqrt(np.mean(np.sum((members - centers[big]) ** 2, axis=1)))
                scale = 1e-3 * max(spread, 1e-6 * np.linalg.norm(centers[big]), 1e-12)
            new = centers[big] + scale * rng.standard_normal(centers.shape[1])
        if spherical:
            nrm = np.linalg.norm(new)
            if nrm == 0:
                new = rng.standard_normal(centers.shape[1])
                nrm = np.linalg.norm(new)
            new = new / nrm
        centers[j] = new
    return len(dead)


def kmeans(points: ArrayLike, k: int, cfg: ClusteringConfig | None = None) -> Codebook:
    cfg = cfg or ClusteringConfig()
    x = as_array(points)
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(cfg.seed)
    x64 = x.astype(np.float64)
    best = None
    for _ in range(cfg.restarts):
        centers, history = _lloyd(x, x64, k, rng, cfg)
        if best is None or history[-1] < best[1][-1]:
            best = (centers, history)
    centers, history = best
    log.debug("kmeans k=%d n=%d stopped after %d iterations", k, n, len(history))
    return Codebook(centers.astype(np.float32), "euclidean", history)


def _lloyd(x, x64, k, rng, cfg):
    centers = _init_centers(x, k, rng)
    history = []
    for it in range(cfg.iterations):
        labels, dist = _nearest(x64, centers)
        cur = float(np.mean(dist))
        history.append(cur)
        if cur == 0 or (it > 0 and history[-2] - cur <= cfg.tolerance * history[-2]):
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        _scatter_sum(sums, labels, x64)
        live = counts > 0
        centers[live] = sums[live] / counts[live, None]
        if not live.all():
            _fix_empty(centers, counts, labels, x, rng, cfg, spherical=False)
    return centers, history


def _scatter_sum(out: np.ndarray, labels: np.ndarray, x: np.ndarray) -> None:
    # bincount per column is much faster than np.add.at on large inputs
    k = out.shape[0]
    for d in range(x.shape[1]):
        out[:, d] = np.bincount(labels, weights=x[:, d], minlength=k)


def spherical_kmeans(points: ArrayLike, k: int, cfg: ClusteringConfig | None = None) -> Codebook:
    """Unit atoms maximising the summed inner product with assigned points.

    Assignment uses the signed inner product (no absolute value); each atom is the
    normalised sum of its points.
    """
    cfg = cfg or ClusteringConfig()
    x = as_array(points)
    x64 = x.astype(np.float64)
    nz = np.flatnonzero(np.any(x64 != 0, axis=1))
    if k < 1 or len(nz) < k:
        raise ValueError(f"need at least k={k} nonzero points, got {len(nz)}")
    rng = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(cfg.restarts):
        centers, history = _spherical_run(x64, nz, k, rng, cfg)
        if best is None or history[-1] > best[1][-1]:
            best = (centers, history)
    centers, history = best
    log.debug("spherical kmeans k=%d stopped after %d iterations", k, len(history))
    c32 = centers.astype(np.float32)
    c32 /= np.linalg.norm(c32.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    return Codebook(c32, "spherical", history)


def _spherical_run(x64, nz, k, rng, cfg):
    centers = _init_centers(x64[nz], k, rng)
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    history = []
    for it in range(cfg.iterations):
        labels, best = _best_dot(x64, centers)
        cur = float(np.sum(best))
        history.append(cur)
        if it > 0 and cur - history[-2] <= cfg.tolerance * abs(history[-2]):
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        _scatter_sum(sums, labels, x64)
        norms = np.linalg.norm(sums, axis=1)
        live = norms > 0
        centers[live] = sums[live] / norms[live, None]
        if not live.all():
            # zero-sum clusters are handled exactly like empty ones
            _fix_empty(centers, np.where(live, counts, 0), labels, x64, rng, cfg, spherical=True)
    return centers, history
