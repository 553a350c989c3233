# Reconstruction error of the six encoders as the number of codebooks grows.
# Prints one row per (method, M) so the numbers can be pasted into a plot.
import numpy as np

from qsr import ClusteringConfig, code_size_bits, distortion, learn_codec, synth_dataset

x = synth_dataset(30_000, 32, "clustered", seed=0, centers=300, spread=0.3).data
base, train = x[:20_000], x[20_000:]
cfg = ClusteringConfig(iterations=15, seed=0)

print("variance per vector:", float(np.sum(base.var(axis=0))))
print(f"{'method':8s} {'M':>2s} {'bits':>5s} {'distortion':>11s}")
for m in (1, 2, 4, 8):
    for kind in ("pq", "apq", "qapq", "rvq", "arvq", "qarvq"):
        p = 16 if kind.startswith("qa") else 0
        codec = learn_codec(kind, train, m, 32, p, cfg)
        print(f"{kind:8s} {m:2d} {code_size_bits(codec):5d} {distortion(base, codec):11.4f}")

# alpha-variants never do worse than their plain counterparts on the same M
# (the unquantized weights are stored as floats, so they are not counted in "bits").
