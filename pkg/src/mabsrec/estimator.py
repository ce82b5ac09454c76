"""Sklearn-style estimator facade over the full pipeline."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import metrics, pipeline, trainer
from .config import TrainConfig
from .corpus import Interaction, InteractionLog, _Interner


def _log_from_records(records) -> InteractionLog:
    """Build an InteractionLog from (user, item, timestamp[, categories]) rows."""
    users, items = _Interner(), _Interner()
    categories: dict[int, frozenset[str]] = {}
    interactions = []
    for row in records:
        if len(row) == 3:
            raw_user, raw_item, ts = row
            cats = frozenset({"unknown"})
        elif len(row) == 4:
            raw_user, raw_item, ts, raw_cats = row
            cats = frozenset(raw_cats) or frozenset({"unknown"})
        else:
            raise ValueError(f"expected 3- or 4-tuples, got row of length {len(row)}")
        if not str(raw_user) or not str(raw_item):
            raise ValueError("user and item identifiers must be nonempty")
        item = items.intern(str(raw_item))
        categories.setdefault(item, cats)
        interactions.append(Interaction(users.intern(str(raw_user)), item, int(ts), cats))
    if not interactions:
        raise ValueError("no interactions provided")
    return InteractionLog(tuple(interactions), users.names, items.names, categories)


class MABSRecRecommender(BaseEstimator):
    """Next-item recommender: tri-view bias partition, graph-enriched
    embeddings, shared-weight attention encoder, adaptive fusion.

    fit() takes an iterable of (user, item, timestamp[, categories])
    records or an InteractionLog; predict() returns top-k item ids per
    user. Hyperparameters mirror TrainConfig and flow through
    get_params/set_params, so the estimator plays nicely with sklearn
    tooling (cloning, grid search).
    """

    def __init__(
        self,
        batch_size: int = 512,
        learning_rate: float = 0.001,
        max_seq_len: int = 50,
        dropout_rate: float = 0.4,
        n_transformer_layers: int = 2,
        n_heads: int = 1,
        n_graph_layers: int = 2,
        graph_dropout_rate: float = 0.4,
        embed_dim: int = 64,
        k_pop: float = 0.5,
        k_subj: float = 0.5,
        patience: int = 10,
        max_epochs: int = 200,
        seed: int = 0,
        ablation: str = "full",
        min_len: int = 5,
        max_keep: int | None = None,
    ):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_seq_len = max_seq_len
        self.dropout_rate = dropout_rate
        self.n_transformer_layers = n_transformer_layers
        self.n_heads = n_heads
        self.n_graph_layers = n_graph_layers
        self.graph_dropout_rate = graph_dropout_rate
        self.embed_dim = embed_dim
        self.k_pop = k_pop
        self.k_subj = k_subj
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.ablation = ablation
        self.min_len = min_len
        self.max_keep = max_keep

    def _config(self) -> TrainConfig:
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        kwargs = {k: v for k, v in self.get_params().items() if k in fields}
        return TrainConfig(**kwargs).validate()

    def fit(self, X, y=None):
        log = X if isinstance(X, InteractionLog) else _log_from_records(X)
        cfg = self._config()
        self.prepared_ = pipeline.prepare_data(log, cfg)
        self.model_, self.train_log_ = trainer.train(self.prepared_, cfg)
        self.n_items_ = self.prepared_.n_items
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() before using the recommender")

    def predict(self, users=None, k: int = 10) -> list[list[str]]:
        """Top-k next-item recommendations (raw item ids) per user."""
        self._check_fitted()
        cfg = self.model_.cfg
        inputs = pipeline.split_inputs(self.prepared_, "test", cfg)
        if users is None:
            rows = range(len(self.prepared_.users))
        else:
            raw_to_row = {
                self.prepared_.user_vocab[u - 1]: row
                for row, u in enumerate(self.prepared_.users)
            }
            rows = [raw_to_row[str(u)] for u in users]
        out = []
        for row in rows:
            _, _, logits = trainer.forward_user(self.model_, inputs, row)
            # descending score, ascending item index on ties
            order = np.lexsort((np.arange(len(logits)), -logits))[:k]
            out.append([self.prepared_.item_vocab[j] for j in order])
        return out

    def score(self, X=None, y=None) -> float:
        """Test-split Recall@10 under the leave-one-out protocol."""
        self._check_fitted()
        report = metrics.evaluate(self.model_, self.prepared_, self.model_.cfg, "test")
        return report["metrics"]["recall@10"]
