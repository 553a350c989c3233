# Cosine-similarity search over l2-normalized vectors with compressed codes.
import numpy as np

from qsr import (
    ClusteringConfig, brute_force_gt, build_flat, l2_normalize, learn_codec,
    recall_at, search_flat, synth_dataset,
)
from qsr.search import search_batch

raw = synth_dataset(22_200, 64, "clustered", seed=1, centers=500, spread=0.4).data
x, zeros = l2_normalize(raw)
print("zero rows skipped:", zeros)
x = x.data
base, train, queries = x[:20_000], x[20_000:22_000], x[22_000:]

gt = brute_force_gt(base, queries, metric="cosine", depth=100)
cfg = ClusteringConfig(iterations=15)

for kind, m, k, p in [("pq", 8, 256, 0), ("qapq", 8, 128, 256), ("rvq", 8, 256, 0), ("qarvq", 7, 256, 256)]:
    codec = learn_codec(kind, train, m, k, p, cfg)
    index = build_flat(codec, base, metric="cosine")
    ids, _, _ = search_batch(lambda y, r: search_flat(index, y, r), queries, 100)
    print(kind, "norm mode:", index.norm_mode,
          " R@1/10/100:", [round(recall_at(ids, gt, r), 3) for r in (1, 10, 100)])

# The query is never approximated, so rescaling it leaves the ranking unchanged.
index = build_flat(learn_codec("qapq", train, 8, 64, 64, cfg), base, metric="cosine")
a = search_flat(index, queries[0], 10).ids
b = search_flat(index, 3.0 * queries[0], 10).ids
print("same top-10 after scaling the query:", bool(np.array_equal(a, b)))
