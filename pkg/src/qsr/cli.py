"""Command-line front end: ``qsr {synth,gt,train,build,search,eval}``.

Vector files use the .fvecs / .bvecs / .ivecs containers; codecs and indexes use
the binary container from :mod:`qsr.serialize`. Text outputs start with ``#``
lines echoing the run configuration.

Exit status: 0 success, 2 usage error, 3 I/O error, 4 invalid data.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import serialize
from .clustering import ClusteringConfig
from .codec import KINDS, LAYOUTS, code_size_bits, learn_codec
from .evaluation import EvalReport, brute_force_gt, distortion, recall_at
from .ivf import CodecSpec, IVFIndex, UnsupportedOperationError, build_ivf, search_ivf, search_ivf_pruned
from .search import FlatIndex, build_flat, exact_norms, learn_norm_quantizer, search_flat
from .serialize import IndexFormatError
from .vectors_io import VectorFormatError, l2_normalize, read_vectors, synth_dataset, write_vectors

log = logging.getLogger("qsr")

EXIT_USAGE, EXIT_IO, EXIT_INVALID = 2, 3, 4


class UsageError(Exception):
    pass


def _write_text(path, text: str) -> None:
    serialize._atomic_write(path, text.encode())


def _write_vectors_atomic(data, path) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        write_vectors(data, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _echo(args) -> str:
    skip = {"func", "cmd"}
    items = [f"# {k}={v}" for k, v in sorted(vars(args).items()) if k not in skip and v is not None]
    return "\n".join(["# qsr " + args.cmd] + items) + "\n"


def _load(path, normalize: bool = False) -> np.ndarray:
    x = read_vectors(path).data
    if normalize:
        x = l2_normalize(x)[0].data
    return x


def _cfg(args) -> ClusteringConfig:
    return ClusteringConfig(iterations=args.iterations, seed=args.seed)


def _check_method(args, dim: int) -> None:
    if args.method in ("qapq", "qarvq") and not args.p:
        raise UsageError(f"--p is required for {args.method}")
    if args.method not in ("qapq", "qarvq") and args.p:
        raise UsageError(f"--p only applies to qapq/qarvq, not {args.method}")
    if LAYOUTS[args.method] == "product" and dim % args.m:
        raise UsageError(f"--m {args.m} does not divide the dimension {dim} ({args.method} splits vectors into M blocks)")


# subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    total = args.n + args.n_train + args.n_query
    data = synth_dataset(total, args.d, args.model, args.seed, args.centers, args.spread).data
    _write_vectors_atomic(data[: args.n], args.out)
    if args.train_out:
        _write_vectors_atomic(data[args.n : args.n + args.n_train], args.train_out)
    if args.query_out:
        _write_vectors_atomic(data[args.n + args.n_train :], args.query_out)
    print(f"wrote {args.n} x {args.d} vectors to {args.out}")
    return 0


def cmd_gt(args) -> int:
    base = _load(args.base, args.normalize)
    queries = _load(args.queries, args.normalize)
    gt = brute_force_gt(base, queries, args.metric, args.depth)
    _write_vectors_atomic(gt.ids.astype(np.int32), args.out)
    print(f"ground truth: {len(queries)} queries, depth {gt.depth}")
    return 0


def cmd_train(args) -> int:
    train = _load(args.train, args.normalize)
    _check_method(args, train.shape[1])
    t0 = time.perf_counter()
    codec = learn_codec(args.method, train, args.m, args.k, args.p or 0, _cfg(args))
    learn_time = time.perf_counter() - t0
    quantizer = None
    if codec.layout == "residual":
        quantizer = learn_norm_quantizer(exact_norms(codec, codec.encode(train)))
    serialize.save(codec, args.out, quantizer)
    print(f"code_size_bits={code_size_bits(codec)}")
    print(f"train_distortion={distortion(train, codec):.6g}")
    print(f"learn_seconds={learn_time:.3f}")
    return 0


def cmd_build(args) -> int:
    base = _load(args.base, args.normalize)
    cfg = _cfg(args)
    if args.kc:
        if not (args.train and args.method):
            raise UsageError("an IVF build (--kc > 0) trains its codec on coarse residuals: give --train and --method")
        train = _load(args.train, args.normalize)
        _check_method(args, train.shape[1])
        if args.metric != "euclidean":
            raise UsageError("IVF indexes are scored with the euclidean metric")
        index = build_ivf(train, base, args.kc, CodecSpec(args.method, args.m, args.k, args.p or 0), cfg,
                          args.norm_mode)
        serialize.save(index, args.out)
        sizes = index.list_sizes()
        print(f"N={index.n}")
        hist, edges = np.histogram(sizes, bins=min(10, max(1, len(np.unique(sizes)))))
        print("list_length_histogram=" + ",".join(f"{int(e)}:{h}" for e, h in zip(edges[:-1], hist)))
        return 0

    quantizer = None
    if args.codec:
        codec, quantizer = serialize.load(args.codec)
    elif args.train and args.method:
        train = _load(args.train, args.normalize)
        _check_method(args, train.shape[1])
        codec = learn_codec(args.method, train, args.m, args.k, args.p or 0, cfg)
        if codec.layout == "residual":
            quantizer = learn_norm_quantizer(exact_norms(codec, codec.encode(train)))
    else:
        raise UsageError("a flat build needs --codec, or --train with --method")
    if base.shape[1] != codec.dim:
        raise ValueError(f"base dimension {base.shape[1]} does not match codec dimension {codec.dim}")
    index = build_flat(codec, base, args.metric, args.norm_mode, quantizer)
    serialize.save(index, args.out)
    print(f"N={len(index)}")
    return 0


def cmd_search(args) -> int:
    index, _ = serialize.load(args.index)
    queries = _load(args.queries, args.normalize)
    if isinstance(index, IVFIndex):
        wc = args.wc or 1
        if args.wprime:
            fn = lambda y: search_ivf_pruned(index, y, args.r, wc, args.wprime)
        else:
            fn = lambda y: search_ivf(index, y, args.r, wc)
    elif isinstance(index, FlatIndex):
        if args.wc or args.wprime:
            raise UsageError("--wc/--wprime apply to IVF indexes only")
        fn = lambda y: search_flat(index, y, args.r)
    else:
        raise UsageError(f"{args.index} holds a codec, not an index")

    lines = [_echo(args).rstrip("\n")]
    counts = []
    t0 = time.perf_counter()
    for qi, y in enumerate(queries):
        hits = fn(y)
        counts.append(hits.n_candidates)
        lines.append(f"{qi}: " + ",".join(f"{i}:{s:.9g}" for i, s in zip(hits.ids, hits.scores)))
    elapsed = time.perf_counter() - t0
    _write_text(args.out, "\n".join(lines) + "\n")
    if args.candidates:
        _write_text(args.candidates, "".join(f"{qi} {c}\n" for qi, c in enumerate(counts)))
    counts = np.asarray(counts)
    print(f"queries={len(queries)} search_seconds={elapsed:.3f}")
    if len(counts):
        print(f"candidates_mean={counts.mean():.1f} candidates_min={counts.min()} candidates_max={counts.max()}")
    return 0


def read_results(path) -> np.ndarray:
    """Parse a results file into an ``(n_queries, depth)`` id array padded with -1."""
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            _, _, rest = line.partition(":")
            rest = rest.strip()
            rows.append([int(tok.split(":")[0]) for tok in rest.split(",")] if rest else [])
    depth = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), depth), -1, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def cmd_eval(args) -> int:
    results = read_results(args.results)
    gt = read_vectors(args.gt).data
    if len(gt) != len(results):
        raise ValueError(f"{len(results)} result rows but {len(gt)} ground-truth rows")
    for r in args.r:
        if r > results.shape[1]:
            raise UsageError(f"R={r} exceeds the result depth {results.shape[1]}")
    report = EvalReport(config={"method": args.method or "", "bits": args.bits or ""})
    report.recalls = {r: recall_at(results, gt, r) for r in args.r}
    if args.codec and args.data:
        codec, _ = serialize.load(args.codec)
        report.distortion = distortion(_load(args.data, args.normalize), codec)
        report.config["bits"] = code_size_bits(codec)
        if not args.method:
            report.config["method"] = codec.kind
    text = report.to_text()
    print(text, end="")
    if args.out:
        _write_text(args.out, _echo(args) + text)
    if args.table:
        _write_text(args.table, report.to_csv())
    return 0


# parser ---------------------------------------------------------------------

def _r_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qsr", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--iterations", type=int, default=25, help="k-means iterations")
        p.add_argument("--normalize", action="store_true", help="l2-normalize input vectors")

    def method(p, required):
        p.add_argument("--method", choices=KINDS, required=required)
        p.add_argument("--m", type=int, default=8)
        p.add_argument("--k", type=int, default=256)
        p.add_argument("--p", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--model", choices=["gaussian", "clustered"], default="gaussian")
    p.add_argument("--centers", type=int, default=10)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=0)
    p.add_argument("--n-query", type=int, default=0)
    p.add_argument("--train-out")
    p.add_argument("--query-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gt", help="exact ground truth by exhaustive scan")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--depth", type=int, default=100)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("train", help="learn a codec")
    p.add_argument("--train", required=True)
    method(p, True)
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build", help="encode a database into a flat or IVF index")
    p.add_argument("--base", required=True)
    p.add_argument("--codec")
    p.add_argument("--train")
    method(p, False)
    common(p)
    p.add_argument("--kc", type=int, default=0, help="coarse centroids; 0 builds a flat index")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--norm-mode", choices=["auto", "gram", "quantized", "product_fast"], default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--r", type=int, default=100)
    p.add_argument("--wc", type=int)
    p.add_argument("--wprime", type=int)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--candidates", help="write per-query scanned-candidate counts here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall@R (and distortion) from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--r", type=_r_list, default=[1, 10, 100])
    p.add_argument("--codec")
    p.add_argument("--data")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--method")
    p.add_argument("--bits")
    p.add_argument("--out")
    p.add_argument("--table")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"qsr {args.cmd}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedOperationError as e:
        print(f"qsr {args.cmd}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VectorFormatError, IndexFormatError) as e:
        print(f"qsr {args.cmd}: invalid data: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"qsr {args.cmd}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"qsr {args.cmd}: invalid data: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
