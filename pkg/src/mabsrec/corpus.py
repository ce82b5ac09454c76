"""Interaction ingestion, filtering, leave-one-out splits and padded windows."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD = 0


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class Interaction:
    user: int  # interned, 1-based
    item: int  # interned, 1-based; 0 reserved for padding
    timestamp: int
    categories: frozenset[str]


@dataclass(frozen=True)
class InteractionLog:
    interactions: tuple[Interaction, ...]
    user_vocab: tuple[str, ...]  # index-1 -> raw id
    item_vocab: tuple[str, ...]
    category_table: Mapping[int, frozenset[str]]  # item index -> categories

    @property
    def n_users(self) -> int:
        return len(self.user_vocab)

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)


@dataclass(frozen=True)
class UserSequence:
    user: int
    items: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class PaddedWindow:
    slots: tuple[int, ...]
    valid_len: int


class _Interner:
    def __init__(self):
        self._index: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, raw: str) -> int:
        idx = self._index.get(raw)
        if idx is None:
            self._names.append(raw)
            idx = len(self._names)  # 1-based; 0 is padding
            self._index[raw] = idx
        return idx

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._names)


def _read_rows(path) -> Iterable[tuple[int, list[str]]]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for line_no, row in enumerate(reader, start=1):
            yield line_no, row


def load_interactions(path, format: str, movies_path=None) -> InteractionLog:
    """Load raw events and intern identifiers into dense 1-based indices.

    ``csv_events``: header user_id,item_id,timestamp,categories with a
    ``|``-separated category list. ``movielens_ratings``: header
    userId,movieId,rating,timestamp with an optional sidecar movies file
    (movieId,title,genres) supplying categories. Items with no declared
    categories get the singleton "unknown" category, which keeps every
    category count positive.
    """
    if format == "csv_events":
        return _load_csv_events(path)
    if format == "movielens_ratings":
        return _load_movielens(path, movies_path)
    raise CorpusError(f"unknown format {format!r}")


def _load_csv_events(path) -> InteractionLog:
    users, items = _Interner(), _Interner()
    categories: dict[int, frozenset[str]] = {}
    interactions: list[Interaction] = []
    for line_no, row in _read_rows(path):
        if line_no == 1:
            if row != ["user_id", "item_id", "timestamp", "categories"]:
                raise CorpusError(f"{path}: line 1: unexpected header {row}")
            continue
        if len(row) != 4:
            raise CorpusError(f"{path}: line {line_no}: expected 4 columns, got {len(row)}")
        raw_user, raw_item, raw_ts, raw_cats = row
        if not raw_user:
            raise CorpusError(f"{path}: line {line_no}: empty user_id")
        if not raw_item:
            raise CorpusError(f"{path}: line {line_no}: empty item_id")
        try:
            ts = int(raw_ts)
        except ValueError:
            raise CorpusError(f"{path}: line {line_no}: bad timestamp {raw_ts!r}") from None
        cats = frozenset(c for c in raw_cats.split("|") if c) or frozenset({"unknown"})
        item = items.intern(raw_item)
        categories.setdefault(item, cats)
        interactions.append(Interaction(users.intern(raw_user), item, ts, cats))
    if not interactions:
        raise CorpusError(f"{path}: no interactions")
    return InteractionLog(tuple(interactions), users.names, items.names, categories)


def _load_movielens(path, movies_path) -> InteractionLog:
    genre_by_movie: dict[str, frozenset[str]] = {}
    if movies_path is not None:
        for line_no, row in _read_rows(movies_path):
            if line_no == 1:
                continue
            if len(row) < 3:
                raise CorpusError(f"{movies_path}: line {line_no}: expected 3 columns")
            genres = frozenset(g for g in row[2].split("|") if g and g != "(no genres listed)")
            genre_by_movie[row[0]] = genres or frozenset({"unknown"})

    users, items = _Interner(), _Interner()
    categories: dict[int, frozenset[str]] = {}
    interactions: list[Interaction] = []
    for line_no, row in _read_rows(path):
        if line_no == 1:
            if row[:2] != ["userId", "movieId"]:
                raise CorpusError(f"{path}: line 1: unexpected header {row}")
            continue
        if len(row) != 4:
            raise CorpusError(f"{path}: line {line_no}: expected 4 columns, got {len(row)}")
        raw_user, raw_movie, _rating, raw_ts = row
        if not raw_user:
            raise CorpusError(f"{path}: line {line_no}: empty userId")
        if not raw_movie:
            raise CorpusError(f"{path}: line {line_no}: empty movieId")
        try:
            ts = int(raw_ts)
        except ValueError:
            raise CorpusError(f"{path}: line {line_no}: bad timestamp {raw_ts!r}") from None
        cats = genre_by_movie.get(raw_movie, frozenset({"unknown"}))
        item = items.intern(raw_movie)
        categories.setdefault(item, cats)
        interactions.append(Interaction(users.intern(raw_user), item, ts, cats))
    if not interactions:
        raise CorpusError(f"{path}: no interactions")
    return InteractionLog(tuple(interactions), users.names, items.names, categories)


def build_sequences(
    log: InteractionLog, min_len: int = 5, max_keep: int | None = None
) -> list[UserSequence]:
    """Chronological per-user sequences with the length filters applied.

    Sequences shorter than ``min_len`` are dropped; if ``max_keep`` is
    set, longer sequences are dropped entirely rather than truncated.
    Equal timestamps keep input-file order (stable sort).
    """
    if min_len < 2:
        raise CorpusError("min_len must be >= 2 (need a target after the split)")
    by_user: dict[int, list[tuple[int, int]]] = {}
    for inter in log.interactions:
        by_user.setdefault(inter.user, []).append((inter.timestamp, inter.item))
    out: list[UserSequence] = []
    for user in sorted(by_user):
        events = sorted(by_user[user], key=lambda e: e[0])
        items = tuple(item for _, item in events)
        if len(items) < min_len:
            continue
        if max_keep is not None and len(items) > max_keep:
            continue
        out.append(UserSequence(user, items))
    if not out:
        raise CorpusError("all sequences filtered out")
    return out


def split_leave_one_out(seq: UserSequence) -> tuple[tuple[int, ...], int, int]:
    """(train prefix, validation target, test target)."""
    if seq.length < 3:
        raise CorpusError(f"user {seq.user}: need at least 3 events, got {seq.length}")
    return seq.items[:-2], seq.items[-2], seq.items[-1]


def pad_truncate(items: Sequence[int], length: int = 50) -> PaddedWindow:
    """Left-pad with 0 to ``length``, or keep the ``length`` most recent items."""
    if length < 1:
        raise CorpusError("window length must be >= 1")
    items = tuple(items)
    if len(items) > length:
        items = items[-length:]
    return PaddedWindow((PAD,) * (length - len(items)) + items, valid_len=len(items))


def save_vocab(path, vocab: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for idx, raw in enumerate(vocab, start=1):
            f.write(f"{idx}\t{raw}\n")


def load_vocab(path) -> tuple[str, ...]:
    names: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            idx_str, raw = line.split("\t", 1)
            if int(idx_str) != line_no:
                raise CorpusError(f"{path}: line {line_no}: indices must be dense and 1-based")
            names.append(raw)
    return tuple(names)


def corpus_stats(log: InteractionLog, sequences: Sequence[UserSequence]) -> dict:
    n_users = len(sequences)
    kept_items = {i for s in sequences for i in s.items}
    n_inter = sum(s.length for s in sequences)
    avg_len = n_inter / n_users if n_users else 0.0
    density = n_inter / (n_users * len(kept_items)) if n_users and kept_items else 0.0
    return {
        "users": n_users,
        "items": len(kept_items),
        "interactions": n_inter,
        "avg_length": avg_len,
        "density": density,
        "removed_users": log.n_users - n_users,
    }
