"""Ranking metrics, length-bucketed evaluation, report serialization."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .config import TrainConfig
from .pipeline import ModelInputs, PreparedData, split_inputs

METRICS = ("recall@1", "recall@5", "recall@10", "ndcg@5", "ndcg@10")


def recall_at_n(ranked_items: Sequence[int], target: int, n: int) -> int:
    if n < 1:
        raise ValueError("N must be >= 1")
    if len(ranked_items) == 0:
        raise ValueError("empty ranking")
    return 1 if target in list(ranked_items)[:n] else 0


def ndcg_at_n(ranked_items: Sequence[int], target: int, n: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) inside the cutoff, else 0."""
    if n < 1:
        raise ValueError("N must be >= 1")
    ranked = list(ranked_items)
    if not ranked:
        raise ValueError("empty ranking")
    try:
        rank = ranked.index(target) + 1
    except ValueError:
        return 0.0
    return 1.0 / math.log2(rank + 1) if rank <= n else 0.0


def target_rank(logits: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` (item index) with ties broken by item index.

    ``logits[j]`` scores item j+1; lower item index wins a tied score.
    """
    t = target - 1
    lt = logits[t]
    better = int(np.sum(logits > lt))
    tied_before = int(np.sum(logits[:t] == lt))
    return better + tied_before + 1


def _rank_metrics(rank: int) -> dict[str, float]:
    out = {}
    for name in METRICS:
        kind, n = name.split("@")
        n = int(n)
        if kind == "recall":
            out[name] = 1.0 if rank <= n else 0.0
        else:
            out[name] = 1.0 / math.log2(rank + 1) if rank <= n else 0.0
    return out


def _batch_ranks(model, inputs: ModelInputs, cfg: TrainConfig) -> np.ndarray:
    from .trainer import forward_batch  # circular at import time only

    n = len(inputs.targets)
    ranks = np.zeros(n, dtype=np.int64)
    for lo in range(0, n, cfg.batch_size):
        rows = np.arange(lo, min(lo + cfg.batch_size, n))
        _, _, logits = forward_batch(model, inputs, rows, train=False)
        block = logits.data
        if cfg.filter_seen:
            block = block.copy()
            for k, row in enumerate(rows):
                seen = [i - 1 for i in inputs.input_seqs[row]]
                block[k, seen] = -np.inf
        for k, row in enumerate(rows):
            ranks[row] = target_rank(block[k], int(inputs.targets[row]))
    return ranks


def _mean_metrics(ranks: np.ndarray) -> dict[str, float]:
    if len(ranks) == 0:
        return {m: 0.0 for m in METRICS}
    acc = {m: 0.0 for m in METRICS}
    for rank in ranks:
        for m, v in _rank_metrics(int(rank)).items():
            acc[m] += v
    return {m: acc[m] / len(ranks) for m in METRICS}


def evaluate_inputs(model, inputs: ModelInputs, cfg: TrainConfig) -> dict[str, float]:
    return _mean_metrics(_batch_ranks(model, inputs, cfg))


def evaluate(
    model,
    prepared: PreparedData,
    cfg: TrainConfig,
    split: str = "test",
    buckets: Sequence[int] | None = None,
) -> dict:
    """EvalReport dict: overall metrics plus optional length-bucket breakdown.

    Bucket edges define half-open ranges [e0,e1), ..., [e_last, inf);
    sequences shorter than the first edge fall into the first bucket so
    the buckets always partition the users.
    """
    inputs = split_inputs(prepared, split, cfg)
    ranks = _batch_ranks(model, inputs, cfg)
    report = {"split": split, "n_users": len(ranks), "metrics": _mean_metrics(ranks)}
    if buckets:
        edges = sorted(buckets)
        sub = {}
        lengths = prepared.orig_length
        for b, lower in enumerate(edges):
            upper = edges[b + 1] if b + 1 < len(edges) else None
            if b == 0:
                in_bucket = lengths < upper if upper is not None else np.ones(len(lengths), bool)
            elif upper is None:
                in_bucket = lengths >= lower
            else:
                in_bucket = (lengths >= lower) & (lengths < upper)
            label = f"{lower}-{upper - 1}" if upper is not None else f"{lower}+"
            sub[label] = {
                "n_users": int(in_bucket.sum()),
                "metrics": _mean_metrics(ranks[in_bucket]),
            }
        report["buckets"] = sub
    return report


def report_to_text(report: Mapping) -> str:
    lines = [f"split: {report['split']}", f"n_users: {report['n_users']}"]
    for m in METRICS:
        lines.append(f"{m}: {report['metrics'][m]:.6f}")
    for label, sub in report.get("buckets", {}).items():
        lines.append(f"bucket {label}:")
        lines.append(f"  n_users: {sub['n_users']}")
        for m in METRICS:
            lines.append(f"  {m}: {sub['metrics'][m]:.6f}")
    return "\n".join(lines) + "\n"


def report_to_csv_row(report: Mapping, run_id: str = "") -> str:
    header = "run_id,split,n_users," + ",".join(METRICS)
    values = [run_id, str(report["split"]), str(report["n_users"])]
    values += [f"{report['metrics'][m]:.6f}" for m in METRICS]
    return header + "\n" + ",".join(values) + "\n"
