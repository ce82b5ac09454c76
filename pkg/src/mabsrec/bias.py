"""Popularity / subjectivity scoring and the tri-partition of user windows."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import ceil
from typing import Mapping, Sequence

from .corpus import PAD, InteractionLog, PaddedWindow


@dataclass(frozen=True)
class BiasPartition:
    popular: tuple[int, ...]
    subjective: tuple[int, ...]
    debiased: tuple[int, ...]


def popularity_scores(log: InteractionLog) -> dict[int, int]:
    """Occurrence count per item over the given (training) interactions."""
    if not log.interactions:
        raise ValueError("empty interaction log")
    counts: dict[int, int] = {i: 0 for i in range(1, log.n_items + 1)}
    for inter in log.interactions:
        counts[inter.item] += 1
    return counts


def popularity_from_sequences(sequences, n_items: int) -> dict[int, int]:
    """Same tally, but over already-split training prefixes."""
    counts = {i: 0 for i in range(1, n_items + 1)}
    for items in sequences:
        for item in items:
            counts[item] += 1
    return counts


def subjectivity_score(
    window_items: Sequence[int],
    item: int,
    category_table: Mapping[int, frozenset[str]],
) -> float:
    """Category-overlap weight of one item against its window.

    The window's category histogram counts every occurrence (an item with
    m categories contributes 1 to each of them, once per position); the
    item's own indicator is dotted with that histogram and divided by the
    item's category count.
    """
    cats = category_table.get(item)
    if not cats:
        raise ValueError(f"item {item} has no categories")
    histogram: Counter[str] = Counter()
    for other in window_items:
        if other == PAD:
            continue
        histogram.update(category_table.get(other, ()))
    return sum(histogram[c] for c in cats) / len(cats)


def window_subjectivity(
    window_items: Sequence[int], category_table: Mapping[int, frozenset[str]]
) -> dict[int, float]:
    scores = {}
    for item in window_items:
        if item != PAD and item not in scores:
            scores[item] = subjectivity_score(window_items, item, category_table)
    return scores


def _top_set(distinct: Sequence[int], scores: Mapping[int, float], k: float) -> set[int]:
    # descending score, ties broken by smaller item index
    cutoff = ceil(k * len(distinct))
    ranked = sorted(distinct, key=lambda i: (-scores[i], i))
    return set(ranked[:cutoff])


def partition_sequence(
    window: PaddedWindow,
    s_p: Mapping[int, float],
    s_c: Mapping[int, float],
    k_pop: float,
    k_subj: float,
) -> BiasPartition:
    """Split a window's items into popular / subjective / debiased views.

    Membership is rank-based over the window's distinct items: the top
    ceil(k*n) by popularity are popularity-high, the top ceil(k*n) by
    subjectivity are subjectivity-high. Popular = pop-high only,
    subjective = subj-high only, debiased = everything else. Each output
    preserves the window's item order.
    """
    if not 0.0 <= k_pop <= 1.0 or not 0.0 <= k_subj <= 1.0:
        raise ValueError("k_pop and k_subj must lie in [0, 1]")
    items = [i for i in window.slots if i != PAD]
    distinct = sorted(set(items))
    pop_high = _top_set(distinct, s_p, k_pop)
    subj_high = _top_set(distinct, s_c, k_subj)
    popular, subjective, debiased = [], [], []
    for item in items:
        if item in pop_high and item not in subj_high:
            popular.append(item)
        elif item in subj_high and item not in pop_high:
            subjective.append(item)
        else:
            debiased.append(item)
    return BiasPartition(tuple(popular), tuple(subjective), tuple(debiased))


def dump_partitions(path, partitions: Mapping[int, BiasPartition]) -> None:
    """Debug dump: one line per user, three comma-joined item lists."""
    with open(path, "w", encoding="utf-8") as f:
        for user in sorted(partitions):
            p = partitions[user]
            f.write(
                "%d\tP:%s\tA:%s\tD:%s\n"
                % (
                    user,
                    ",".join(map(str, p.popular)),
                    ",".join(map(str, p.subjective)),
                    ",".join(map(str, p.debiased)),
                )
            )
