"""Binary container for codecs, flat indexes and IVF indexes.

All integers and floats are little-endian. Layout::

    magic      4 bytes   b"QSR1"
    container  u8        0 codec only, 1 flat index, 2 IVF index
    kind       u8        position in KINDS (pq, rvq, apq, arvq, qapq, qarvq)
    layout     u8        0 product, 1 residual
    metric     u8        0 cosine, 1 euclidean
    norm_mode  u8        0 gram, 1 quantized, 2 product_fast
    has_levels u8        1 if a 256-level norm quantizer follows
    reserved   2 bytes
    D, M, K, P 4 x i32   P = 0 when there is no coefficient codebook
    atoms      M*K*sub_dim f32, row-major (sub_dim = D or D/M)
    coeffs     P*M f32
    levels     256 f32   (if has_levels)
  flat:
    N          u32
    N records
  IVF:
    Kc         u32
    coarse     Kc*D f32
    Kc lists:  u32 length, then per entry: u32 id + record

A record holds ceil(M*b/8) bytes of atom indices with b = ceil(log2 K), packed as
one big-endian integer with k_1 in the most significant bits; then ceil(log2 P/8)
bytes of p as a big-endian integer (or M f32 raw weights for apq/arvq); then one
norm byte when norm_mode is quantized.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .clustering import Codebook
from .codec import KINDS, Codec, Codes, bits_for, make_codec
from .search import FlatIndex, NormQuantizer

MAGIC = b"QSR1"
_HEADER = struct.Struct("<4s6B2x4i")
_NORM_MODES = ("gram", "quantized", "product_fast")
_METRICS = ("cosine", "euclidean")
CODEC, FLAT, IVF = 0, 1, 2


class IndexFormatError(ValueError):
    """The container is malformed or does not match what the caller expects."""


def atom_bytes(codec: Codec) -> int:
    return (codec.m * bits_for(codec.k) + 7) // 8


def coeff_bytes(codec: Codec) -> int:
    if codec.alpha_mode:
        return 4 * codec.m
    if codec.coeffs is None:
        return 0
    return (bits_for(codec.p) + 7) // 8


def record_size(codec: Codec, norm_byte: bool = False) -> int:
    """Bytes per encoded vector on disk."""
    return atom_bytes(codec) + coeff_bytes(codec) + int(norm_byte)


def _pack_uint(values: np.ndarray, widths: list[int], nbytes: int) -> np.ndarray:
    """Pack unsigned fields into right-aligned big-endian integers of ``nbytes`` bytes."""
    n = len(values)
    total = sum(widths)
    bits = np.zeros((n, nbytes * 8), dtype=np.uint8)
    pos = nbytes * 8 - total
    for j, w in enumerate(widths):
        if w == 0:
            continue
        shifts = np.arange(w - 1, -1, -1, dtype=np.uint64)
        bits[:, pos : pos + w] = (values[:, j, None].astype(np.uint64) >> shifts) & 1
        pos += w
    return np.packbits(bits, axis=1)


def _unpack_uint(raw: np.ndarray, widths: list[int]) -> np.ndarray:
    n, nbytes = raw.shape
    bits = np.unpackbits(raw, axis=1)
    pos = nbytes * 8 - sum(widths)
    out = np.zeros((n, len(widths)), dtype=np.int64)
    for j, w in enumerate(widths):
        if w == 0:
            continue
        weights = (1 << np.arange(w - 1, -1, -1, dtype=np.int64))
        out[:, j] = bits[:, pos : pos + w].astype(np.int64) @ weights
        pos += w
    return out


def pack_codes(codec: Codec, codes: Codes, norm_bytes=None) -> np.ndarray:
    """``(N, record_size)`` uint8 array of packed records."""
    n = len(codes)
    b = bits_for(codec.k)
    parts = [_pack_uint(codes.indices, [b] * codec.m, atom_bytes(codec))]
    if codec.alpha_mode:
        parts.append(np.ascontiguousarray(codes.alpha.astype("<f4")).view(np.uint8).reshape(n, -1))
    elif codec.coeffs is not None:
        parts.append(_pack_uint(np.asarray(codes.p)[:, None], [bits_for(codec.p)], coeff_bytes(codec)))
    if norm_bytes is not None:
        parts.append(np.asarray(norm_bytes, dtype=np.uint8)[:, None])
    return np.concatenate(parts, axis=1) if n else np.empty((0, record_size(codec, norm_bytes is not None)), np.uint8)


def unpack_codes(codec: Codec, raw: np.ndarray, norm_byte: bool = False) -> tuple[Codes, np.ndarray | None]:
    ab, cb = atom_bytes(codec), coeff_bytes(codec)
    idx = _unpack_uint(raw[:, :ab], [bits_for(codec.k)] * codec.m)
    p = alpha = None
    if codec.alpha_mode:
        alpha = raw[:, ab : ab + cb].copy().view("<f4").astype(np.float32).reshape(len(raw), codec.m)
    elif codec.coeffs is not None:
        p = _unpack_uint(raw[:, ab : ab + cb], [bits_for(codec.p)])[:, 0]
    nb = raw[:, ab + cb].copy() if norm_byte else None
    return Codes(idx, p, alpha), nb


# writing ------------------------------------------------------------------

def _header(container, codec, metric, norm_mode, quantizer) -> bytes:
    out = [_HEADER.pack(
        MAGIC, container, KINDS.index(codec.kind), 0 if codec.layout == "product" else 1,
        _METRICS.index(metric), _NORM_MODES.index(norm_mode), int(quantizer is not None),
        codec.dim, codec.m, codec.k, codec.p,
    )]
    out.append(codec.atoms.astype("<f4").tobytes())
    if codec.coeffs is not None:
        out.append(codec.coeffs.astype("<f4").tobytes())
    if quantizer is not None:
        out.append(quantizer.levels.astype("<f4").tobytes())
    return b"".join(out)


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def codec_to_bytes(codec: Codec, quantizer: NormQuantizer | None = None, metric: str = "euclidean") -> bytes:
    mode = "product_fast" if codec.layout == "product" else "gram"
    return _header(CODEC, codec, metric, mode, quantizer)


def flat_to_bytes(index: FlatIndex) -> bytes:
    quant = index.norm_mode == "quantized"
    recs = pack_codes(index.codec, index.codes, index.norm_bytes if quant else None)
    return b"".join([
        _header(FLAT, index.codec, index.metric, index.norm_mode, index.norm_quantizer),
        struct.pack("<I", len(index.codes)),
        recs.tobytes(),
    ])


def ivf_to_bytes(index) -> bytes:
    quant = index.norm_mode == "quantized"
    out = [
        _header(IVF, index.codec, index.metric, index.norm_mode, index.norm_quantizer),
        struct.pack("<I", index.kc),
        index.coarse.centers.astype("<f4").tobytes(),
    ]
    for pl in index.lists:
        recs = pack_codes(index.codec, pl.codes, pl.norm_bytes if quant else None)
        ids = pl.ids.astype("<u4").view(np.uint8).reshape(len(pl), 4)
        out.append(struct.pack("<I", len(pl)))
        out.append(np.concatenate([ids, recs], axis=1).tobytes())
    return b"".join(out)


def save(obj, path, quantizer: NormQuantizer | None = None) -> None:
    """Write a Codec, FlatIndex or IVFIndex atomically."""
    from .ivf import IVFIndex

    if isinstance(obj, FlatIndex):
        payload = flat_to_bytes(obj)
    elif isinstance(obj, IVFIndex):
        payload = ivf_to_bytes(obj)
    elif isinstance(obj, Codec):
        payload = codec_to_bytes(obj, quantizer)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    _atomic_write(path, payload)


# reading ------------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise IndexFormatError(f"unexpected end of data at byte offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(buf: bytes):
    """Parse a container; returns ``(container, object, quantizer)``."""
    from .ivf import IVFIndex, PostingList

    rd = _Reader(buf)
    magic, container, kind, layout, metric, mode, has_levels, d, m, k, p = _HEADER.unpack(rd.take(_HEADER.size))
    if magic != MAGIC:
        raise IndexFormatError(f"bad magic {bytes(magic)!r}")
    if container not in (CODEC, FLAT, IVF) or kind >= len(KINDS):
        raise IndexFormatError("unknown container or codec tag")
    kind = KINDS[kind]
    sub = d // m if layout == 0 else d
    atoms = rd.array("<f4", m * k * sub).reshape(m, k, sub)
    coeffs = rd.array("<f4", p * m).reshape(p, m) if p else None
    codec = make_codec(kind, atoms, coeffs)
    quantizer = NormQuantizer(rd.array("<f4", 256)) if has_levels else None
    metric = _METRICS[metric]
    norm_mode = _NORM_MODES[mode]
    quant = norm_mode == "quantized"
    rec = record_size(codec, quant)

    if container == CODEC:
        obj = codec
    elif container == FLAT:
        n = rd.u32()
        raw = rd.array(np.uint8, n * rec).reshape(n, rec)
        codes, nb = unpack_codes(codec, raw, quant)
        obj = FlatIndex(codec, codes, metric, norm_mode, nb, quantizer)
    else:
        kc = rd.u32()
        centers = rd.array("<f4", kc * d).reshape(kc, d)
        lists = []
        for _ in range(kc):
            n = rd.u32()
            raw = rd.array(np.uint8, n * (4 + rec)).reshape(n, 4 + rec)
            ids = raw[:, :4].copy().view("<u4").ravel().astype(np.int64)
            codes, nb = unpack_codes(codec, raw[:, 4:], quant)
            lists.append(PostingList(ids, codes, nb))
        obj = IVFIndex(Codebook(centers, "euclidean"), codec, lists, norm_mode, quantizer)
    if rd.pos != len(rd.buf):
        raise IndexFormatError(f"{len(rd.buf) - rd.pos} trailing bytes after container")
    return container, obj, quantizer


def load(path):
    """Read a container written by :func:`save`; returns ``(obj, quantizer)``."""
    with open(path, "rb") as f:
        _, obj, quantizer = from_bytes(f.read())
    return obj, quantizer
