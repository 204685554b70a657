"""Dual unimodal encoders: motion and text sequences to unit joint-space vectors.

Both branches share one pipeline:

1. per element: ``h_f = embed(x_f) + pe(f)``, where ``embed`` is an affine map
   of the pose frame (motion) or a row lookup in the token table (text);
2. single-query attention pooling: ``a = softmax(h @ q / sqrt(d))``,
   ``pooled = sum_f a_f h_f``;
3. projection ``z = pooled @ W + b``;
4. ``e = z / |z|``.

Everything is batched over ragged sequences packed into one array; see
``_kernels`` for the layout. Gradients are exact and hand-derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    DimensionMismatch,
    InvalidConfig,
    OddDimension,
    StaleCache,
    TokenOutOfRange,
)
from .numeric import Rng, normalize_rows, normalize_rows_backward

MOTION_KEYS = ("W_embed", "b_embed", "q_pool", "W_h", "b_h")
TEXT_KEYS = ("E_vocab", "q_pool_t", "W_g", "b_g")
PARAM_KEYS = MOTION_KEYS + TEXT_KEYS


def positional_encoding(position: int, dim: int) -> np.ndarray:
    if dim % 2:
        raise OddDimension(f"positional encoding needs an even dim, got {dim}")
    k = np.arange(dim // 2, dtype=np.float64)
    angle = position / np.power(10000.0, 2.0 * k / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def positional_table(length: int, dim: int) -> np.ndarray:
    """Rows 0..length-1 of the sinusoidal encoding."""
    if dim % 2:
        raise OddDimension(f"positional encoding needs an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / dim)
    out = np.empty((length, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


@dataclass(frozen=True)
class EncoderConfig:
    pose_dim: int  # D_p
    motion_dim: int = 32  # D_l
    word_dim: int = 32  # D_w
    joint_dim: int = 32  # D
    vocab_size: int = 64

    def validate(self) -> None:
        for name in ("pose_dim", "motion_dim", "word_dim", "joint_dim", "vocab_size"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(name, "must be >= 1")
        for name in ("motion_dim", "word_dim"):
            if getattr(self, name) % 2:
                raise InvalidConfig(name, "must be even (sinusoidal positional encoding)")


@dataclass
class EncoderParams:
    """Parameters of both branches, keyed as in ``PARAM_KEYS``.

    ``version`` is bumped whenever the arrays are modified in place, so a
    forward cache can tell that it has gone stale.
    """

    arrays: dict[str, np.ndarray]
    version: int = 0

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    @property
    def config(self) -> EncoderConfig:
        return EncoderConfig(
            pose_dim=self["W_embed"].shape[0],
            motion_dim=self["W_embed"].shape[1],
            word_dim=self["E_vocab"].shape[1],
            joint_dim=self["W_h"].shape[1],
            vocab_size=self["E_vocab"].shape[0],
        )

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.arrays.items()}, self.version)

    def bump(self) -> None:
        self.version += 1


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    The pooling queries are drawn like one row of the layer feeding them; the
    token table is treated as a linear layer on one-hot input (fan_in = vocab).
    """
    config.validate()
    rng = Rng(seed)
    c = config

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    arrays = {
        "W_embed": uniform((c.pose_dim, c.motion_dim), c.pose_dim),
        "b_embed": np.zeros(c.motion_dim),
        "q_pool": uniform(c.motion_dim, c.motion_dim),
        "W_h": uniform((c.motion_dim, c.joint_dim), c.motion_dim),
        "b_h": np.zeros(c.joint_dim),
        "E_vocab": uniform((c.vocab_size, c.word_dim), c.vocab_size),
        "q_pool_t": uniform(c.word_dim, c.word_dim),
        "W_g": uniform((c.word_dim, c.joint_dim), c.word_dim),
        "b_g": np.zeros(c.joint_dim),
    }
    return EncoderParams(arrays)


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


@dataclass
class ForwardCache:
    kind: str  # "motion" or "text"
    version: int
    params_id: int
    inputs: np.ndarray  # packed frames (motion) or token ids (text)
    offsets: np.ndarray
    positions: np.ndarray
    H: np.ndarray
    attn: np.ndarray
    pooled: np.ndarray
    norms: np.ndarray
    embeddings: np.ndarray = field(repr=False)


def _pack(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    if lengths.size == 0:
        raise DimensionMismatch("empty batch")
    if lengths.min() < 1:
        raise DimensionMismatch(f"sequence {int(lengths.argmin())} is empty")
    offsets = np.zeros(lengths.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    positions = np.arange(offsets[-1]) - np.repeat(offsets[:-1], lengths)
    return np.concatenate(seqs), offsets, positions


def _pool_project(H, offsets, q, W, b):
    scale = 1.0 / np.sqrt(H.shape[1])
    pooled, attn = _kernels.pool_forward(H, offsets, q, scale)
    Z = pooled @ W + b
    E, norms = normalize_rows(Z)
    return E, attn, pooled, norms


def encode_motions(params: EncoderParams, poses: Sequence[np.ndarray]) -> tuple[np.ndarray, ForwardCache]:
    """Encode a list of (F_k, D_p) pose matrices to an (n, D) unit-row matrix."""
    pose_dim = params["W_embed"].shape[0]
    seqs = []
    for k, p in enumerate(poses):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != pose_dim:
            raise DimensionMismatch(f"motion {k} has shape {p.shape}, expected (F, {pose_dim})")
        seqs.append(p)
    X, offsets, positions = _pack(seqs)
    d = params["W_embed"].shape[1]
    H = X @ params["W_embed"] + params["b_embed"] + positional_table(int(positions.max()) + 1, d)[positions]
    E, attn, pooled, norms = _pool_project(H, offsets, params["q_pool"], params["W_h"], params["b_h"])
    cache = ForwardCache("motion", params.version, id(params), X, offsets, positions, H, attn, pooled, norms, E)
    return E, cache


def encode_texts(params: EncoderParams, texts: Sequence[Sequence[int]]) -> tuple[np.ndarray, ForwardCache]:
    """Encode a list of token-id sequences to an (n, D) unit-row matrix."""
    vocab = params["E_vocab"].shape[0]
    seqs = []
    for k, t in enumerate(texts):
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        if t.size and (t.min() < 0 or t.max() >= vocab):
            raise TokenOutOfRange(f"text {k} has token ids outside [0, {vocab})")
        seqs.append(t)
    ids, offsets, positions = _pack(seqs)
    d = params["E_vocab"].shape[1]
    H = params["E_vocab"][ids] + positional_table(int(positions.max()) + 1, d)[positions]
    E, attn, pooled, norms = _pool_project(H, offsets, params["q_pool_t"], params["W_g"], params["b_g"])
    cache = ForwardCache("text", params.version, id(params), ids, offsets, positions, H, attn, pooled, norms, E)
    return E, cache


def encode_motion(params: EncoderParams, pose_seq) -> tuple[np.ndarray, ForwardCache]:
    E, cache = encode_motions(params, [pose_seq])
    return E[0], cache


def encode_text(params: EncoderParams, token_seq) -> tuple[np.ndarray, ForwardCache]:
    E, cache = encode_texts(params, [token_seq])
    return E[0], cache


def encoder_backward(params: EncoderParams, cache: ForwardCache, grad_wrt_embedding, grads=None) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients of one branch into ``grads``.

    ``grad_wrt_embedding`` has the shape of the forward output ((n, D) or, for
    the single-sample wrappers, (D,)). Gradients of the other branch are left
    at zero.
    """
    if cache.version != params.version or cache.params_id != id(params):
        raise StaleCache(f"{cache.kind} cache was built for parameter version {cache.version}, now {params.version}")
    if grads is None:
        grads = zero_grads(params)
    G = np.asarray(grad_wrt_embedding, dtype=np.float64).reshape(cache.embeddings.shape)
    dZ = normalize_rows_backward(cache.embeddings, cache.norms, G)
    if cache.kind == "motion":
        q_key, W_key, b_key = "q_pool", "W_h", "b_h"
    else:
        q_key, W_key, b_key = "q_pool_t", "W_g", "b_g"
    W = params[W_key]
    grads[W_key] += cache.pooled.T @ dZ
    grads[b_key] += dZ.sum(axis=0)
    dpooled = dZ @ W.T
    scale = 1.0 / np.sqrt(cache.H.shape[1])
    dH, dq = _kernels.pool_backward(cache.H, cache.offsets, params[q_key], scale, cache.attn, dpooled)
    grads[q_key] += dq
    if cache.kind == "motion":
        grads["W_embed"] += cache.inputs.T @ dH
        grads["b_embed"] += dH.sum(axis=0)
    else:
        np.add.at(grads["E_vocab"], cache.inputs, dH)
    return grads
