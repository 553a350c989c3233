# Inverted file with Qalpha-RVQ residual codes, with and without first-layer pruning.
from qsr import CodecSpec, ClusteringConfig, brute_force_gt, build_ivf, recall_at, search_ivf, search_ivf_pruned, synth_dataset
from qsr.search import search_batch

x = synth_dataset(130_200, 64, "clustered", seed=2, centers=1000, spread=0.3).data
base, train, queries = x[:100_000], x[100_000:130_000], x[130_000:]
gt = brute_force_gt(base, queries, depth=1)

index = build_ivf(train, base, 128, CodecSpec("qarvq", 8, 64, 64), ClusteringConfig(iterations=15))
sizes = index.list_sizes()
print("lists:", index.kc, " min/mean/max length:", sizes.min(), round(sizes.mean()), sizes.max())
print("norm mode:", index.norm_mode)

for wc in (4, 16):
    ids, _, cnt = search_batch(lambda y, r: search_ivf(index, y, r, wc), queries, 100)
    print(f"wc={wc:2d} full     recall@100={recall_at(ids, gt, 100):.3f} candidates={cnt.mean():.0f}")
    for wprime in (32, 8, 2):
        ids, _, cnt = search_batch(lambda y, r: search_ivf_pruned(index, y, r, wc, wprime), queries, 100)
        print(f"wc={wc:2d} wprime={wprime:2d} recall@100={recall_at(ids, gt, 100):.3f} candidates={cnt.mean():.0f}")
