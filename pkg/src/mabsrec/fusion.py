"""Adaptive multi-bias attention head: per-view sigmoid scores and fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor


@dataclass
class FusionParams:
    w_1: Tensor  # (6d, d)
    b_1: Tensor  # (d,)
    w_2: Tensor  # (d, 3)
    b_2: Tensor  # (3,)


def init_fusion_params(params: ParamSet, d: int, rng: np.random.Generator) -> FusionParams:
    def uniform(shape):
        bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)

    return FusionParams(
        w_1=params.add("fusion_w_1", uniform((6 * d, d))),
        b_1=params.add("fusion_b_1", np.zeros(d)),
        w_2=params.add("fusion_w_2", uniform((d, 3))),
        b_2=params.add("fusion_b_2", np.zeros(3)),
    )


def fusion_param_count(d: int) -> int:
    return 6 * d * d + d + d * 3 + 3


def fuse_features(x_p: Tensor, x_a: Tensor, x_d: Tensor, triple_sum: bool = False) -> Tensor:
    """Concatenate the three view vectors and their pairwise sums (6d wide).

    ``triple_sum`` swaps the final block for the three-way sum, keeping
    the width unchanged.
    """
    if not (x_p.data.shape == x_a.data.shape == x_d.data.shape):
        raise ValueError("view encodings must share a shape")
    last = (
        ad.add(ad.add(x_p, x_a), x_d) if triple_sum else ad.add(x_a, x_d)
    )
    return ad.concat(
        [x_p, x_a, x_d, ad.add(x_p, x_a), ad.add(x_p, x_d), last], axis=-1
    )


def bias_scores(fused: Tensor, fp: FusionParams) -> Tensor:
    """Two-layer ReLU network with a width-3 sigmoid output."""
    hidden = ad.relu(ad.add(ad.matmul(fused, fp.w_1), fp.b_1))
    return ad.sigmoid(ad.add(ad.matmul(hidden, fp.w_2), fp.b_2))


def predict_vector(scores: Tensor, x_p: Tensor, x_a: Tensor, x_d: Tensor) -> Tensor:
    """Score-weighted sum of the three view encodings."""
    if scores.data.shape[-1] != 3:
        raise ValueError("expected 3 view scores")
    views = (x_p, x_a, x_d)
    out = None
    for k, view in enumerate(views):
        s_k = ad.slice_axis(scores, scores.data.ndim - 1, k, k + 1)
        term = ad.mul(s_k, view)
        out = term if out is None else ad.add(out, term)
    return out


def fuse(
    x_p: Tensor, x_a: Tensor, x_d: Tensor, fp: FusionParams, triple_sum: bool = False
) -> tuple[Tensor, Tensor]:
    """(scores, prediction vector) for a batch of view encodings."""
    fused = fuse_features(x_p, x_a, x_d, triple_sum)
    scores = bias_scores(fused, fp)
    return scores, predict_vector(scores, x_p, x_a, x_d)
