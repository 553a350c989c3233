"""Ground truth, recall@R, distortion and phase timings."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .codec import Codec
from .vectors_io import ArrayLike, as_array


@dataclass
class GroundTruth:
    ids: np.ndarray  # (n_queries, depth), nearest first
    metric: str = "euclidean"

    @property
    def depth(self) -> int:
        return self.ids.shape[1]


def _exact_scores(base: np.ndarray, y: np.ndarray, cand: np.ndarray, metric: str) -> np.ndarray:
    """Direct scores for a few candidates; smaller is better for both metrics."""
    xs = base[cand].astype(np.float64)
    if metric == "euclidean":
        return np.sum((xs - y) ** 2, axis=1)
    nrm = np.linalg.norm(xs, axis=1)
    return -np.where(nrm > 0, (xs @ y) / np.where(nrm > 0, nrm, 1.0), 0.0)


def brute_force_gt(base: ArrayLike, queries: ArrayLike, metric: str = "euclidean",
                   depth: int = 100, chunk: int = 256) -> GroundTruth:
    """Exact nearest neighbours by exhaustive scan; equal scores rank the lower id first.

    Scores are first computed through a matrix product, then a candidate pool around
    the ``depth``-th value is re-scored directly so near-ties resolve exactly.
    """
    if metric not in ("euclidean", "cosine"):
        raise ValueError(f"unknown metric {metric!r}")
    x = as_array(base)
    q = as_array(queries)
    if len(q) and q.shape[1] != x.shape[1]:
        raise ValueError("query and base dimensions differ")
    depth = max(0, min(depth, len(x)))
    out = np.empty((len(q), depth), dtype=np.int64)
    if depth == 0:
        return GroundTruth(out, metric)
    x64 = x.astype(np.float64)
    if metric == "euclidean":
        aux = np.einsum("ij,ij->i", x64, x64)
    else:
        nrm = np.linalg.norm(x64, axis=1)
        aux = np.where(nrm > 0, nrm, 1.0)
    ids = np.arange(len(x))
    # keep each (chunk, N) score block around 128 MB
    chunk = max(1, min(chunk, (1 << 24) // max(len(x), 1)))
    for s in range(0, len(q), chunk):
        yb = q[s : s + chunk].astype(np.float64)
        ip = yb @ x64.T
        key = aux[None, :] - 2.0 * ip if metric == "euclidean" else -ip / aux[None, :]
        for i, y in enumerate(yb):
            row = key[i]
            if depth < len(row):
                kth = np.partition(row, depth - 1)[depth - 1]
                slack = 1e-9 * (abs(kth) + np.abs(row).max() + 1e-30)
                cand = np.flatnonzero(row <= kth + slack)
            else:
                cand = ids
            exact = _exact_scores(x64, y, cand, metric)
            out[s + i] = cand[np.lexsort((cand, exact))[:depth]]
    return GroundTruth(out, metric)


def recall_at(results, gt: GroundTruth | np.ndarray, r: int) -> float:
    """Fraction of queries whose true nearest neighbour is within the first ``r`` results."""
    res = np.asarray(results)
    truth = gt.ids if isinstance(gt, GroundTruth) else np.asarray(gt)
    if res.ndim != 2 or len(res) != len(truth):
        raise ValueError("results and ground truth must cover the same queries")
    if r > res.shape[1]:
        raise ValueError(f"R={r} exceeds result depth {res.shape[1]}")
    if len(res) == 0:
        return 0.0
    hit = np.any(res[:, :r] == truth[:, :1], axis=1)
    return float(hit.mean())


def distortion(ds: ArrayLike, codec: Codec, chunk: int = 65536) -> float:
    """Mean squared reconstruction error ``(1/N) sum ||x - Q(x)||^2``."""
    x = as_array(ds)
    if len(x) == 0:
        return 0.0
    total = 0.0
    for s in range(0, len(x), chunk):
        xb = x[s : s + chunk].astype(np.float64)
        err = xb - codec.decode(codec.encode(xb))
        total += float(np.einsum("ij,ij->", err, err))
    return total / len(x)


class BenchResult(NamedTuple):
    phase: str
    seconds: float
    relative: float | None
    value: Any


def bench(phase: str, fn: Callable, *args, baseline: float | None = None, **kwargs) -> BenchResult:
    """Wall time of one call on the monotonic clock, optionally relative to a baseline time."""
    t0 = time.perf_counter()
    value = fn(*args, **kwargs)
    dt = time.perf_counter() - t0
    rel = dt / baseline if baseline else None
    return BenchResult(phase, dt, rel, value)


@dataclass
class EvalReport:
    recalls: dict = field(default_factory=dict)  # R -> recall
    distortion: float | None = None
    times: dict = field(default_factory=dict)  # phase -> seconds
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.config.items()]
        lines += [f"recall@{r}={v:.6f}" for r, v in sorted(self.recalls.items())]
        if self.distortion is not None:
            lines.append(f"distortion={self.distortion:.6g}")
        lines += [f"time_{k}={v:.6f}" for k, v in self.times.items()]
        return "\n".join(lines) + "\n"

    def rows(self) -> list[dict]:
        method = self.config.get("method", "")
        bits = self.config.get("bits", "")
        return [{"method": method, "bits": bits, "R": r, "recall": v,
                 "distortion": "" if self.distortion is None else self.distortion}
                for r, v in sorted(self.recalls.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["method", "bits", "R", "recall", "distortion"])
        w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue()


def evaluate(results, gt: GroundTruth, rs=(1, 10, 100), **config) -> EvalReport:
    return EvalReport({r: recall_at(results, gt, r) for r in rs}, config=config)
