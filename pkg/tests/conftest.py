import numpy as np
import pytest

from mabsrec.config import TrainConfig
from mabsrec.corpus import Interaction, InteractionLog
from mabsrec.estimator import _log_from_records


def make_log(records):
    return _log_from_records(records)


@pytest.fixture
def tiny_log():
    """12 users x 7 events over 19 items with 4 categories."""
    rng = np.random.default_rng(3)
    records = []
    for u in range(12):
        for j in range(7):
            records.append((f"u{u}", f"i{rng.integers(1, 20)}", j, [f"c{rng.integers(0, 4)}"]))
    return make_log(records)


def memorization_log(n_users=50, n_items=30, seq_len=8):
    """Every user walks a fixed item cycle, so next-item is a lookup table."""
    records = []
    for u in range(n_users):
        start = u % n_items
        for j in range(seq_len):
            item = (start + j) % n_items + 1
            records.append((f"u{u}", f"i{item}", j))
    return make_log(records)


def memorization_config(**overrides):
    base = dict(
        batch_size=50,
        learning_rate=0.01,
        max_seq_len=8,
        embed_dim=32,
        n_heads=2,
        n_transformer_layers=1,
        n_graph_layers=2,
        dropout_rate=0.0,
        graph_dropout_rate=0.0,
        max_epochs=300,
        patience=300,
        seed=7,
    )
    base.update(overrides)
    return TrainConfig(**base).validate()


def toy_config(**overrides):
    base = dict(
        batch_size=64,
        max_seq_len=8,
        embed_dim=8,
        n_heads=2,
        n_transformer_layers=1,
        n_graph_layers=2,
        dropout_rate=0.0,
        graph_dropout_rate=0.0,
        max_epochs=2,
        seed=5,
    )
    base.update(overrides)
    return TrainConfig(**base).validate()
