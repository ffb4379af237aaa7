"""Video tower with hierarchical temporal attention, and a small text tower.

Per transformer layer the video tower applies, in order:
  1. spatially-local temporal attention over patch tokens only (SlT),
     with [CLS]/[MST] rows passed through untouched,
  2. global spatio-temporal attention over the full stacked sequence (GST),
  3. an MLP, each step with a residual connection.
The final-layer [CLS] row, linearly projected and L2-normalized, is the
video embedding. The text tower is a deliberately simple stand-in:
embedding + position lookup, mean pool, linear projection, L2 norm.

All forward code is written against a `Tape` so the whole model is
differentiable end to end. For training throughput a batch of B clips is
encoded as one stacked sequence of B blocks with block-diagonal masks;
the per-clip entry points are the B=1 case of the same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .masks import TokenLayout, gst_stacked_mask, slt_mask
from .tape import MASK_NEG, Tape


@dataclass(frozen=True)
class VideoTowerConfig:
    layout: TokenLayout
    L: int = 4
    heads: int = 4
    D: int = 32
    mlp_ratio: int = 4
    patch: int = 4              # patch side P; frames are H x W x 3, H,W % P == 0
    mst_self_direction: str = "finer_or_equal"

    def __post_init__(self):
        if self.layout.d % self.heads != 0:
            raise ValueError(f"d={self.layout.d} not divisible by heads={self.heads}")
        if self.L < 1 or self.D < 1:
            raise ValueError("L and D must be >= 1")


@dataclass(frozen=True)
class TextTowerConfig:
    vocab: int = 256
    context: int = 32
    D: int = 32
    width: int = 32


def init_video_params(config: VideoTowerConfig, rng: np.random.Generator,
                      std: float = 0.02) -> dict[str, np.ndarray]:
    lay = config.layout
    d = lay.d
    pdim = config.patch * config.patch * 3
    p = {
        "patch_proj.w": rng.normal(0.0, std, (pdim, d)),
        "patch_proj.b": np.zeros(d),
        "pos.spatial": rng.normal(0.0, std, (lay.N, d)),
        # temporal embeddings start at zero: at init every frame is treated
        # like a still image and per-frame representations are symmetric
        "pos.temporal": np.zeros((lay.T, d)),
        "cls": rng.normal(0.0, std, (1, d)),
        "head.w": rng.normal(0.0, std, (d, config.D)),
    }
    if lay.num_mst:
        p["mst"] = rng.normal(0.0, std, (lay.num_mst, d))
    for l in range(config.L):
        for blk in ("slt", "gst"):
            pre = f"layer{l}.{blk}"
            p[f"{pre}.ln.g"] = np.ones(d)
            p[f"{pre}.ln.b"] = np.zeros(d)
            for w in ("wq", "wk", "wv"):
                p[f"{pre}.{w}"] = rng.normal(0.0, std, (d, d))
            for b in ("bq", "bk", "bv", "bo"):
                p[f"{pre}.{b}"] = np.zeros(d)
            # SlT output projections start at zero so each block is an exact
            # identity at initialization.
            if blk == "slt":
                p[f"{pre}.wo"] = np.zeros((d, d))
            else:
                p[f"{pre}.wo"] = rng.normal(0.0, std, (d, d))
        h = config.mlp_ratio * d
        p[f"layer{l}.mlp.w1"] = rng.normal(0.0, std, (d, h))
        p[f"layer{l}.mlp.b1"] = np.zeros(h)
        p[f"layer{l}.mlp.w2"] = rng.normal(0.0, std, (h, d))
        p[f"layer{l}.mlp.b2"] = np.zeros(d)
    return p


def init_text_params(config: TextTowerConfig, rng: np.random.Generator,
                     std: float = 0.02) -> dict[str, np.ndarray]:
    return {
        "text.emb": rng.normal(0.0, std, (config.vocab, config.width)),
        "text.pos": rng.normal(0.0, std, (config.context, config.width)),
        "text.proj.w": rng.normal(0.0, std, (config.width, config.D)),
    }


def register_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, int]:
    return {name: tape.leaf(v, requires_grad=True) for name, v in params.items()}


def patchify(clip: np.ndarray, patch: int) -> np.ndarray:
    """[T, H, W, 3] -> [T*N, P*P*3] rows in frame-major, raster patch order."""
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4 or clip.shape[3] != 3:
        raise ValueError(f"expected clip [T, H, W, 3], got {clip.shape}")
    t, h, w, _ = clip.shape
    if h % patch or w % patch:
        raise ValueError(f"frame size {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = clip.reshape(t, gh, patch, gw, patch, 3)
    x = x.transpose(0, 1, 3, 2, 4, 5)          # t, gh, gw, P, P, 3
    return x.reshape(t * gh * gw, patch * patch * 3)


# -- block-diagonal masks for batch-stacked sequences -------------------------

def _block_diag(allowed: np.ndarray, b: int) -> np.ndarray:
    big = np.kron(np.eye(b, dtype=np.uint8), allowed.astype(np.uint8))
    return np.where(big.astype(bool), 0.0, MASK_NEG)


@lru_cache(maxsize=32)
def _slt_entries(layout: TokenLayout, b: int) -> np.ndarray:
    return _block_diag(slt_mask(layout).entries == 0.0, b)


@lru_cache(maxsize=32)
def _gst_entries(layout: TokenLayout, direction: str, b: int) -> np.ndarray:
    return _block_diag(gst_stacked_mask(layout, direction).entries == 0.0, b)


# -- forward blocks ------------------------------------------------------------

def embed_frames(tape: Tape, clip: np.ndarray, pid: dict[str, int],
                 config: VideoTowerConfig) -> int:
    """Patch tokens [T*N, d]: linear patch projection + spatial and temporal
    position embeddings."""
    return embed_frames_batch(tape, [clip], pid, config)


def embed_frames_batch(tape: Tape, clips, pid: dict[str, int],
                       config: VideoTowerConfig) -> int:
    lay = config.layout
    rows = np.concatenate([patchify(c, config.patch) for c in clips], axis=0)
    if rows.shape[0] != len(clips) * lay.T * lay.N:
        raise ValueError(
            f"clips yield {rows.shape[0]} patches, layout expects "
            f"{len(clips)} x {lay.T * lay.N}"
        )
    x = tape.matmul(tape.constant(rows), pid["patch_proj.w"])
    x = tape.add(x, pid["patch_proj.b"])
    x = tape.add(x, tape.tile_rows(pid["pos.spatial"], lay.T * len(clips)))
    x = tape.add(x, tape.tile_rows(tape.repeat_rows(pid["pos.temporal"], lay.N),
                                   len(clips)))
    return x


def _attention(tape: Tape, x: int, pre: str, pid: dict[str, int],
               mask_entries: np.ndarray, heads: int) -> int:
    """Multi-head masked self-attention over rows of x (post-LN input)."""
    d = tape.value(x).shape[1]
    dh = d // heads
    q = tape.add(tape.matmul(x, pid[f"{pre}.wq"]), pid[f"{pre}.bq"])
    k = tape.add(tape.matmul(x, pid[f"{pre}.wk"]), pid[f"{pre}.bk"])
    v = tape.add(tape.matmul(x, pid[f"{pre}.wv"]), pid[f"{pre}.bv"])
    outs = []
    for h in range(heads):
        a, b = h * dh, (h + 1) * dh
        qh, kh, vh = (tape.take_cols(n, a, b) for n in (q, k, v))
        logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / math.sqrt(dh))
        attn = tape.masked_softmax(logits, mask_entries)
        outs.append(tape.matmul(attn, vh))
    merged = tape.concat_cols(outs) if heads > 1 else outs[0]
    return tape.add(tape.matmul(merged, pid[f"{pre}.wo"]), pid[f"{pre}.bo"])


def _check_shape(tape: Tape, z: int, lay: TokenLayout, b: int) -> None:
    s = tape.value(z).shape
    if s != (b * lay.seq_len, lay.d):
        raise ValueError(f"sequence shape {s} != ({b} x {lay.seq_len}, {lay.d})")


def _split_indices(lay: TokenLayout, b: int):
    """Row indices of special ([CLS]+[MST]) and patch tokens in a B-block
    stacked sequence, plus the permutation that reassembles block order."""
    s, ns = lay.seq_len, 1 + lay.num_mst
    base = np.arange(b)[:, None] * s
    idx_special = (base + np.arange(ns)[None, :]).ravel()
    idx_patch = (base + np.arange(ns, s)[None, :]).ravel()
    perm = np.empty(b * s, dtype=np.int64)
    perm[idx_special] = np.arange(b * ns)
    perm[idx_patch] = b * ns + np.arange(b * (s - ns))
    return idx_special, idx_patch, perm


def slt_block(tape: Tape, z: int, layer: int, pid: dict[str, int],
              config: VideoTowerConfig, batch: int = 1) -> int:
    """Spatially-local temporal attention; [CLS]/[MST] rows bypass it."""
    lay = config.layout
    _check_shape(tape, z, lay, batch)
    idx_special, idx_patch, perm = _split_indices(lay, batch)
    special = tape.take_rows(z, idx_special)
    patches = tape.take_rows(z, idx_patch)
    pre = f"layer{layer}.slt"
    x = tape.layer_norm(patches, pid[f"{pre}.ln.g"], pid[f"{pre}.ln.b"])
    attn = _attention(tape, x, pre, pid, _slt_entries(lay, batch), config.heads)
    updated = tape.add(attn, patches)
    return tape.take_rows(tape.concat_rows([special, updated]), perm)


def gst_block(tape: Tape, z: int, layer: int, pid: dict[str, int],
              config: VideoTowerConfig, batch: int = 1) -> int:
    """Global spatio-temporal attention over the stacked sequence, then MLP,
    each with a residual."""
    lay = config.layout
    _check_shape(tape, z, lay, batch)
    pre = f"layer{layer}.gst"
    mask = _gst_entries(lay, config.mst_self_direction, batch)
    x = tape.layer_norm(z, pid[f"{pre}.ln.g"], pid[f"{pre}.ln.b"])
    z = tape.add(_attention(tape, x, pre, pid, mask, config.heads), z)
    m = f"layer{layer}.mlp"
    h = tape.gelu(tape.add(tape.matmul(z, pid[f"{m}.w1"]), pid[f"{m}.b1"]))
    mlp = tape.add(tape.matmul(h, pid[f"{m}.w2"]), pid[f"{m}.b2"])
    return tape.add(mlp, z)


def encode_video_batch(tape: Tape, clips, pid: dict[str, int],
                       config: VideoTowerConfig) -> int:
    """Unit-norm video embeddings as a [B, D] tape node."""
    lay = config.layout
    b = len(clips)
    patches = embed_frames_batch(tape, clips, pid, config)
    specials = [pid["cls"]]
    if lay.num_mst:
        specials.append(pid["mst"])
    special = tape.tile_rows(tape.concat_rows(specials)
                             if len(specials) > 1 else specials[0], b)
    _, _, perm = _split_indices(lay, b)
    z = tape.take_rows(tape.concat_rows([special, patches]), perm)
    for l in range(config.L):
        z = slt_block(tape, z, l, pid, config, batch=b)
        z = gst_block(tape, z, l, pid, config, batch=b)
    cls_rows = tape.take_rows(z, np.arange(b) * lay.seq_len)
    return tape.normalize_rows(tape.matmul(cls_rows, pid["head.w"]))


def encode_video(tape: Tape, clip: np.ndarray, pid: dict[str, int],
                 config: VideoTowerConfig) -> int:
    """Unit-norm video embedding as a [1, D] tape node."""
    return encode_video_batch(tape, [clip], pid, config)


def encode_text(tape: Tape, token_ids, pid: dict[str, int],
                config: TextTowerConfig) -> int:
    """Unit-norm text embedding as a [1, D] tape node (mean-pool stand-in,
    order-insensitive by construction)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty token sequence")
    if ids.size > config.context:
        raise ValueError(
            f"input has {ids.size} tokens, context length is {config.context}"
        )
    if ids.min() < 0 or ids.max() >= config.vocab:
        raise ValueError("token id out of vocabulary range")
    x = tape.add(tape.take_rows(pid["text.emb"], ids),
                 tape.take_rows(pid["text.pos"], np.arange(ids.size)))
    pooled = tape.scale(tape.matmul(tape.constant(np.ones((1, ids.size))), x),
                        1.0 / ids.size)
    return tape.normalize_rows(tape.matmul(pooled, pid["text.proj.w"]))


def video_embedding(clip, params: dict[str, np.ndarray],
                    config: VideoTowerConfig) -> np.ndarray:
    """Forward-only convenience wrapper returning a [D] vector."""
    tape = Tape()
    pid = register_params(tape, params)
    return tape.value(encode_video(tape, clip, pid, config))[0]


def video_embeddings(clips, params: dict[str, np.ndarray],
                     config: VideoTowerConfig) -> np.ndarray:
    tape = Tape()
    pid = register_params(tape, params)
    return tape.value(encode_video_batch(tape, clips, pid, config))


def text_embedding(token_ids, params: dict[str, np.ndarray],
                   config: TextTowerConfig) -> np.ndarray:
    tape = Tape()
    pid = register_params(tape, params)
    return tape.value(encode_text(tape, token_ids, pid, config))[0]
