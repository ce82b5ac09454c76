"""On-disk layout of prepared corpus artifacts and run outputs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import bias, corpus, graph
from .config import TrainConfig, config_to_dict
from .pipeline import VIEWS, PreparedData, partition_window

GRAPH_FILES = {v: f"graph_{v}.txt" for v in VIEWS}


def save_prepared(out_dir, prepared: PreparedData, cfg: TrainConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_vocab(out / "items.tsv", prepared.item_vocab)
    corpus.save_vocab(out / "users.tsv", prepared.user_vocab)
    with open(out / "categories.tsv", "w", encoding="utf-8") as f:
        for item in range(1, prepared.n_items + 1):
            cats = sorted(prepared.category_table.get(item, ()))
            f.write(f"{item}\t{'|'.join(cats)}\n")
    with open(out / "splits.jsonl", "w", encoding="utf-8") as f:
        for row, user in enumerate(prepared.users):
            rec = {
                "user": user,
                "train": list(prepared.train_prefix[row]),
                "valid": int(prepared.valid_target[row]),
                "test": int(prepared.test_target[row]),
                "length": int(prepared.orig_length[row]),
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    partitions = {
        user: partition_window(prepared.train_prefix[row], prepared.s_p,
                               prepared.category_table, cfg)
        for row, user in enumerate(prepared.users)
    }
    bias.dump_partitions(out / "partitions.txt", partitions)
    for view, fname in GRAPH_FILES.items():
        graph.save_edge_list(out / fname, prepared.transition_graphs[view])
    (out / "stats.json").write_text(
        json.dumps(prepared.stats, indent=2, sort_keys=True) + "\n"
    )
    (out / "prepare_config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    )
    (out / "vocab_hash.txt").write_text(prepared.vocab_hash() + "\n")


def load_prepared(artifacts_dir, cfg: TrainConfig) -> PreparedData:
    """Rebuild PreparedData from a prepare run's outputs."""
    art = Path(artifacts_dir)
    if not (art / "splits.jsonl").exists():
        raise FileNotFoundError(f"no prepared artifacts in {art} (missing splits.jsonl)")
    item_vocab = corpus.load_vocab(art / "items.tsv")
    user_vocab = corpus.load_vocab(art / "users.tsv")
    category_table: dict[int, frozenset[str]] = {}
    with open(art / "categories.tsv", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            idx_str, cats = line.split("\t", 1)
            category_table[int(idx_str)] = frozenset(c for c in cats.split("|") if c)

    users, train_prefix, valid_t, test_t, lengths = [], [], [], [], []
    with open(art / "splits.jsonl", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            users.append(rec["user"])
            train_prefix.append(tuple(rec["train"]))
            valid_t.append(rec["valid"])
            test_t.append(rec["test"])
            lengths.append(rec["length"])

    n_items = len(item_vocab)
    s_p = bias.popularity_from_sequences(train_prefix, n_items)
    transition = {v: graph.load_edge_list(art / f) for v, f in GRAPH_FILES.items()}
    normalized = {v: graph.normalize(g) for v, g in transition.items()}
    stats = json.loads((art / "stats.json").read_text())
    return PreparedData(
        n_items=n_items,
        item_vocab=item_vocab,
        user_vocab=user_vocab,
        category_table=category_table,
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
