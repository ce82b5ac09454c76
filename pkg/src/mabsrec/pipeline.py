"""Assembly of corpus artifacts: splits, partitions, view graphs, model inputs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import bias, corpus, graph
from .config import TrainConfig

VIEWS = ("popular", "subjective", "debiased")


@dataclass
class ModelInputs:
    """Per-split padded view windows ready for the encoder."""

    view_indices: dict[str, np.ndarray]  # view -> (N, L) int64
    view_nonempty: dict[str, np.ndarray]  # view -> (N,) float64 in {0, 1}
    targets: np.ndarray  # (N,) item indices, 1-based
    input_seqs: list[tuple[int, ...]]


@dataclass
class PreparedData:
    n_items: int
    item_vocab: tuple[str, ...]
    user_vocab: tuple[str, ...]
    category_table: Mapping[int, frozenset[str]]
    users: list[int]
    train_prefix: list[tuple[int, ...]]
    valid_target: np.ndarray
    test_target: np.ndarray
    orig_length: np.ndarray
    s_p: dict[int, int]
    transition_graphs: dict[str, graph.TransitionGraph]
    graphs: dict[str, graph.NormalizedItemGraph]
    stats: dict

    def vocab_hash(self) -> str:
        blob = "\n".join(self.item_vocab).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def partition_window(
    items: Sequence[int],
    s_p: Mapping[int, float],
    category_table: Mapping[int, frozenset[str]],
    cfg: TrainConfig,
) -> bias.BiasPartition:
    window = corpus.pad_truncate(items, cfg.max_seq_len)
    s_c = bias.window_subjectivity(window.slots, category_table)
    return bias.partition_sequence(window, s_p, s_c, cfg.k_pop, cfg.k_subj)


def make_model_inputs(
    input_seqs: Sequence[Sequence[int]],
    targets: Sequence[int],
    s_p: Mapping[int, float],
    category_table: Mapping[int, frozenset[str]],
    cfg: TrainConfig,
) -> ModelInputs:
    length = cfg.max_seq_len
    n = len(input_seqs)
    view_indices = {v: np.zeros((n, length), dtype=np.int64) for v in VIEWS}
    view_nonempty = {v: np.zeros(n) for v in VIEWS}
    for row, items in enumerate(input_seqs):
        part = partition_window(items, s_p, category_table, cfg)
        for view, view_items in zip(VIEWS, (part.popular, part.subjective, part.debiased)):
            padded = corpus.pad_truncate(view_items, length)
            view_indices[view][row] = padded.slots
            view_nonempty[view][row] = 1.0 if padded.valid_len > 0 else 0.0
    return ModelInputs(
        view_indices,
        view_nonempty,
        np.asarray(targets, dtype=np.int64),
        [tuple(s) for s in input_seqs],
    )


def prepare_data(log: corpus.InteractionLog, cfg: TrainConfig) -> PreparedData:
    """Full deterministic preprocessing from a raw log to training artifacts.

    Popularity counts and view graphs are computed from the training
    prefixes only, so held-out targets never leak into them.
    """
    sequences = corpus.build_sequences(log, min_len=cfg.min_len, max_keep=cfg.max_keep)
    users, train_prefix, valid_t, test_t, lengths = [], [], [], [], []
    for seq in sequences:
        train_items, valid_target, test_target = corpus.split_leave_one_out(seq)
        users.append(seq.user)
        train_prefix.append(train_items)
        valid_t.append(valid_target)
        test_t.append(test_target)
        lengths.append(seq.length)

    s_p = bias.popularity_from_sequences(train_prefix, log.n_items)

    view_seqs: dict[str, list[tuple[int, ...]]] = {v: [] for v in VIEWS}
    for items in train_prefix:
        part = partition_window(items, s_p, log.category_table, cfg)
        view_seqs["popular"].append(part.popular)
        view_seqs["subjective"].append(part.subjective)
        view_seqs["debiased"].append(part.debiased)

    transition = {
        v: graph.build_adjacency(view_seqs[v], log.n_items) for v in VIEWS
    }
    normalized = {v: graph.normalize(g) for v, g in transition.items()}

    stats = corpus.corpus_stats(log, sequences)
    return PreparedData(
        n_items=log.n_items,
        item_vocab=log.item_vocab,
        user_vocab=log.user_vocab,
        category_table=log.category_table,
        users=users,
        train_prefix=train_prefix,
        valid_target=np.asarray(valid_t, dtype=np.int64),
        test_target=np.asarray(test_t, dtype=np.int64),
        orig_length=np.asarray(lengths, dtype=np.int64),
        s_p=s_p,
        transition_graphs=transition,
        graphs=normalized,
        stats=stats,
    )


def split_inputs(prepared: PreparedData, split: str, cfg: TrainConfig) -> ModelInputs:
    """Model inputs for one split under the leave-one-out protocol.

    train: prefix minus its last item, predicting that last item;
    valid: full prefix predicting the held-out penultimate item;
    test: prefix plus validation item predicting the final item.
    """
    if split == "train":
        seqs = [p[:-1] for p in prepared.train_prefix]
        targets = [p[-1] for p in prepared.train_prefix]
    elif split == "valid":
        seqs = list(prepared.train_prefix)
        targets = prepared.valid_target
    elif split == "test":
        seqs = [p + (v,) for p, v in zip(prepared.train_prefix, prepared.valid_target)]
        targets = prepared.test_target
    else:
        raise ValueError(f"unknown split {split!r}")
    return make_model_inputs(seqs, targets, prepared.s_p, prepared.category_table, cfg)
