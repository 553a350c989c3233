"""Quantized sparse representations for approximate nearest-neighbor search."""

from .baselines import PQCodec, RVQCodec, learn_pq, learn_rvq
from .clustering import ClusteringConfig, Codebook, assign, kmeans, spherical_kmeans
from .codec import Codec, Codes, code_size_bits, learn_codec
from .evaluation import EvalReport, GroundTruth, bench, brute_force_gt, distortion, recall_at
from .ivf import CodecSpec, IVFIndex, build_ivf, search_ivf, search_ivf_pruned
from .search import (
    FlatIndex,
    GramTable,
    NormQuantizer,
    build_flat,
    build_lookup,
    learn_norm_quantizer,
    norm_of_code,
    score_numerator,
    search_flat,
)
from .sparse import SparseCodec, learn_qapq, learn_qarvq, pursuit, refit_weights
from .vectors_io import Dataset, l2_normalize, read_vectors, synth_dataset, write_vectors

__version__ = "0.1.0"
