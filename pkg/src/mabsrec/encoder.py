"""Shared-weight multi-head self-attention encoder over biased windows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor

NEG_INF = -1e30


@dataclass
class LayerParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


@dataclass
class EncoderParams:
    item_embeddings: Tensor  # (n_items+1, d); row 0 frozen at zero
    positions: Tensor  # (L, d)
    layers: list[LayerParams]
    d: int
    n_heads: int


def init_encoder_params(
    params: ParamSet,
    n_items: int,
    d: int,
    seq_len: int,
    n_layers: int,
    n_heads: int,
    rng: np.random.Generator,
) -> EncoderParams:
    if d % n_heads != 0:
        raise ValueError(f"embed dim {d} not divisible by {n_heads} heads")
    emb = rng.normal(0.0, 0.02, size=(n_items + 1, d))
    emb[0] = 0.0
    item_embeddings = params.add("item_embeddings", emb)
    positions = params.add("positions", rng.normal(0.0, 0.02, size=(seq_len, d)))

    def uniform(shape):
        # fan-average scaling
        bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    for l in range(n_layers):
        p = f"enc{l}_"
        layers.append(
            LayerParams(
                w_q=params.add(p + "w_q", uniform((d, d))),
                w_k=params.add(p + "w_k", uniform((d, d))),
                w_v=params.add(p + "w_v", uniform((d, d))),
                w_o=params.add(p + "w_o", uniform((d, d))),
                ln1_gamma=params.add(p + "ln1_gamma", np.ones(d)),
                ln1_beta=params.add(p + "ln1_beta", np.zeros(d)),
                w_1=params.add(p + "w_1", uniform((d, d))),
                b_1=params.add(p + "b_1", np.zeros(d)),
                w_2=params.add(p + "w_2", uniform((d, d))),
                b_2=params.add(p + "b_2", np.zeros(d)),
                ln2_gamma=params.add(p + "ln2_gamma", np.ones(d)),
                ln2_beta=params.add(p + "ln2_beta", np.zeros(d)),
            )
        )
    return EncoderParams(item_embeddings, positions, layers, d, n_heads)


def encoder_param_count(n_items: int, d: int, seq_len: int, n_layers: int) -> int:
    """Closed-form trainable parameter count; independent of the view count."""
    per_layer = 6 * d * d + 6 * d  # four d*d projections, two d*d FFN mats, 4 bias/affine d-vecs + 2 more
    return (n_items + 1) * d + seq_len * d + n_layers * per_layer


def embed_with_positions(
    window_indices: np.ndarray,
    feature_matrix: Tensor,
    positions: Tensor,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Item vectors gathered per slot plus learned position vectors.

    ``window_indices`` is (..., L) of item indices with 0 for padding;
    padding slots pick up the zero row of the feature matrix.
    """
    gathered = ad.embedding_lookup(feature_matrix, window_indices)
    out = ad.add(gathered, positions)
    return ad.dropout(out, dropout_rate, train, rng)


def _causal_mask(length: int) -> np.ndarray:
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = NEG_INF
    return mask


def attention_block(
    x: Tensor,
    layer: LayerParams,
    n_heads: int,
    causal_mask: bool = True,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    padding_mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head self-attention, then residual add and layer-norm.

    ``padding_mask`` (optional, (..., L) with 1 for real slots) blanks
    attention onto padding keys.
    """
    d = x.data.shape[-1]
    head_dim = d // n_heads
    scale = 1.0 / np.sqrt(head_dim)
    length = x.data.shape[-2]

    additive = np.zeros((length, length))
    if causal_mask:
        additive = additive + _causal_mask(length)
    if padding_mask is not None:
        key_block = np.where(padding_mask[..., None, :] > 0, 0.0, NEG_INF)
        additive = additive + key_block

    heads = []
    for h in range(n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        q = ad.matmul(x, ad.slice_axis(layer.w_q, 1, lo, hi))
        k = ad.matmul(x, ad.slice_axis(layer.w_k, 1, lo, hi))
        v = ad.matmul(x, ad.slice_axis(layer.w_v, 1, lo, hi))
        scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), scale)
        scores = ad.add_const(scores, additive)
        weights = ad.softmax(scores)
        weights = ad.dropout(weights, dropout_rate, train, rng)
        heads.append(ad.matmul(weights, v))
    attn = ad.matmul(ad.concat(heads, axis=-1), layer.w_o)
    residual = ad.add(x, attn)
    return ad.layer_norm(residual, layer.ln1_gamma, layer.ln1_beta)


def ffn(
    x: Tensor,
    layer: LayerParams,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    residual: bool = True,
) -> Tensor:
    """Position-wise GELU feed-forward; residual + layer-norm by default."""
    hidden = ad.gelu(ad.add(ad.matmul(x, layer.w_1), layer.b_1))
    out = ad.add(ad.matmul(hidden, layer.w_2), layer.b_2)
    out = ad.dropout(out, dropout_rate, train, rng)
    if residual:
        out = ad.add(x, out)
    return ad.layer_norm(out, layer.ln2_gamma, layer.ln2_beta)


def encode_view(
    window_indices: np.ndarray,
    feature_matrix: Tensor,
    enc: EncoderParams,
    causal_mask: bool = True,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    ffn_residual: bool = True,
    mask_padding: bool = False,
) -> Tensor:
    """Encode windows (..., L) into one summary vector per window (..., d).

    The summary is the last-slot representation (most recent item);
    windows that are entirely padding encode to the zero vector.
    """
    window_indices = np.asarray(window_indices, dtype=np.int64)
    x = embed_with_positions(
        window_indices, feature_matrix, enc.positions, dropout_rate, train, rng
    )
    padding_mask = (window_indices > 0).astype(np.float64) if mask_padding else None
    for layer in enc.layers:
        x = attention_block(
            x, layer, enc.n_heads, causal_mask, dropout_rate, train, rng, padding_mask
        )
        x = ffn(x, layer, dropout_rate, train, rng, residual=ffn_residual)
    length = window_indices.shape[-1]
    last = ad.slice_axis(x, x.data.ndim - 2, length - 1, length)
    last = _node_squeeze(last, axis=-2)
    nonempty = (window_indices.max(axis=-1) > 0).astype(np.float64)
    return ad.mul_const(last, nonempty[..., None])


def _node_squeeze(t: Tensor, axis: int) -> Tensor:
    shape = t.data.shape
    out_shape = tuple(s for i, s in enumerate(shape) if i != axis % len(shape))
    out_data = t.data.reshape(out_shape)

    def backward(g, push):
        push(t, g.reshape(shape))

    return ad._node(out_data, (t,), backward)
