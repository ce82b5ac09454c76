"""Item-transition graphs: construction, symmetric normalization, propagation.

Matrices are (n_items+1) square with index 0 (padding) kept empty, so a
propagated feature matrix keeps its all-zero padding row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad

# incremented by propagate(); lets tests assert the graph path was (not) taken
PROPAGATE_CALLS = 0


def reset_propagate_counter() -> None:
    global PROPAGATE_CALLS
    PROPAGATE_CALLS = 0


@dataclass(frozen=True)
class TransitionGraph:
    n_items: int
    adjacency: sp.csr_matrix  # (n_items+1) square, symmetric, integer weights


@dataclass(frozen=True)
class NormalizedItemGraph:
    n_items: int
    matrix: sp.csr_matrix  # D^{-1/2} (A + I) D^{-1/2}


def build_adjacency(view_sequences: Iterable[Sequence[int]], n_items: int) -> TransitionGraph:
    """Accumulate adjacent-pair transitions over all users' view sequences.

    Every adjacent pair (i, j) adds 1 to both (i, j) and (j, i); user
    contributions are summed. Consecutive duplicates land on the diagonal.
    """
    rows: list[int] = []
    cols: list[int] = []
    for seq in view_sequences:
        for p in range(len(seq) - 1):
            i, j = seq[p], seq[p + 1]
            if not (1 <= i <= n_items and 1 <= j <= n_items):
                raise IndexError(f"item index out of range: ({i}, {j}), n_items={n_items}")
            rows.extend((i, j))
            cols.extend((j, i))
    shape = (n_items + 1, n_items + 1)
    if not rows:
        adj = sp.csr_matrix(shape, dtype=np.float64)
    else:
        data = np.ones(len(rows), dtype=np.float64)
        adj = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
    return TransitionGraph(n_items, adj)


def normalize(graph: TransitionGraph) -> NormalizedItemGraph:
    """Symmetric normalization with unit self-loops on every real item.

    Degrees are computed after adding I, so every item has degree >= 1
    and isolated items come out as a bare unit diagonal entry.
    """
    n = graph.n_items
    eye = sp.diags(
        np.concatenate(([0.0], np.ones(n))), format="csr", dtype=np.float64
    )  # no self-loop on the padding index
    a_tilde = (graph.adjacency + eye).tocsr()
    degrees = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degrees)
    nonzero = degrees > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(degrees[nonzero])
    d_half = sp.diags(inv_sqrt, format="csr")
    return NormalizedItemGraph(n, (d_half @ a_tilde @ d_half).tocsr())


def propagate(x0: ad.Tensor, graph: NormalizedItemGraph, layers: int) -> ad.Tensor:
    """Activation-free message passing, averaging the layer outputs.

    Returns (sum over l=1..layers of S^l x0) / layers; the raw embedding
    (layer 0) is excluded from the mean. Differentiable in x0.
    """
    global PROPAGATE_CALLS
    PROPAGATE_CALLS += 1
    if layers < 1:
        raise ValueError("need at least one propagation layer")
    if x0.data.shape[0] != graph.n_items + 1:
        raise ValueError(
            f"embedding rows {x0.data.shape[0]} != n_items+1 = {graph.n_items + 1}"
        )
    x = x0
    total = None
    for _ in range(layers):
        x = ad.sparse_matmul(graph.matrix, x)
        total = x if total is None else ad.add(total, x)
    return ad.scale(total, 1.0 / layers)


def dense_normalize_oracle(adjacency: np.ndarray) -> np.ndarray:
    """Dense-matrix reference for normalize(); test oracle only."""
    n = adjacency.shape[0] - 1
    if n > 64:
        raise ValueError("dense oracle is guarded to small graphs")
    a_tilde = adjacency.astype(np.float64).copy()
    a_tilde[1:, 1:] += np.eye(n)
    degrees = a_tilde.sum(axis=1)
    inv_sqrt = np.where(degrees > 0, 1.0 / np.sqrt(np.maximum(degrees, 1e-300)), 0.0)
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


def dense_propagate_oracle(x0: np.ndarray, s_hat: np.ndarray, layers: int) -> np.ndarray:
    """Dense matrix-power reference for propagate(); test oracle only."""
    x = x0.astype(np.float64)
    total = np.zeros_like(x)
    for _ in range(layers):
        x = s_hat @ x
        total += x
    return total / layers


def save_edge_list(path, graph: TransitionGraph) -> None:
    coo = graph.adjacency.tocoo()
    entries = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# n_items {graph.n_items}\n")
        for i, j, w in entries:
            if i <= j:
                f.write(f"{i} {j} {int(w)}\n")


def load_edge_list(path) -> TransitionGraph:
    rows, cols, data = [], [], []
    n_items = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if len(parts) == 3 and parts[1] == "n_items":
                    n_items = int(parts[2])
                continue
            i, j, w = line.split()
            i, j, w = int(i), int(j), float(w)
            rows.append(i)
            cols.append(j)
            data.append(w)
            if i != j:
                rows.append(j)
                cols.append(i)
                data.append(w)
    if n_items is None:
        raise ValueError(f"{path}: missing '# n_items' header")
    shape = (n_items + 1, n_items + 1)
    if rows:
        adj = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
    else:
        adj = sp.csr_matrix(shape, dtype=np.float64)
    return TransitionGraph(n_items, adj)
