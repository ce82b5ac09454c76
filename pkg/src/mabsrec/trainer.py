"""Model composition, recommendation loss, Adam training with early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder, fusion, graph
from .autodiff import ParamSet, Tensor
from .config import TrainConfig
from .pipeline import VIEWS, ModelInputs, PreparedData


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Model:
    params: ParamSet
    enc: encoder.EncoderParams
    fuse: fusion.FusionParams
    graphs: dict[str, graph.NormalizedItemGraph] | None
    n_items: int
    cfg: TrainConfig


def build_model(
    n_items: int,
    cfg: TrainConfig,
    graphs: dict[str, graph.NormalizedItemGraph] | None,
    rng: np.random.Generator,
) -> Model:
    params = ParamSet()
    enc_params = encoder.init_encoder_params(
        params, n_items, cfg.embed_dim, cfg.max_seq_len,
        cfg.n_transformer_layers, cfg.n_heads, rng,
    )
    fuse_params = fusion.init_fusion_params(params, cfg.embed_dim, rng)
    return Model(params, enc_params, fuse_params, graphs, n_items, cfg)


def total_param_count(n_items: int, cfg: TrainConfig) -> int:
    return encoder.encoder_param_count(
        n_items, cfg.embed_dim, cfg.max_seq_len, cfg.n_transformer_layers
    ) + fusion.fusion_param_count(cfg.embed_dim)


def score_items(e_pred: Tensor, item_embeddings: Tensor) -> Tensor:
    """Dot-product logits of the prediction vector against items 1..n."""
    real_rows = ad.slice_axis(item_embeddings, 0, 1, item_embeddings.data.shape[0])
    return ad.matmul(e_pred, ad.transpose_last2(real_rows))


def rec_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Full-softmax cross-entropy; ``targets`` are 1-based item indices."""
    targets = np.asarray(targets, dtype=np.int64)
    n_items = logits.data.shape[-1]
    if targets.size and (targets.min() < 1 or targets.max() > n_items):
        raise IndexError(f"target item out of range [1, {n_items}]")
    return ad.cross_entropy_with_logits(logits, targets - 1)


def _view_features(model: Model, train: bool, rng) -> dict[str, Tensor]:
    """Graph-enriched (or raw, for w/o G) item features per bias view."""
    cfg = model.cfg
    emb = model.enc.item_embeddings
    if cfg.ablation in ("wo_G", "wo_D"):
        return {v: emb for v in VIEWS}
    features = {}
    for view in VIEWS:
        m = graph.propagate(emb, model.graphs[view], cfg.n_graph_layers)
        features[view] = ad.dropout(m, cfg.graph_dropout_rate, train, rng)
    return features


def forward_batch(
    model: Model,
    inputs: ModelInputs,
    rows: np.ndarray | slice,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run a batch through views -> shared encoder -> fusion -> item logits.

    Returns (per-view scores, prediction vectors, logits). For the w/o A
    and w/o D ablations the scores tensor holds the constant 1/3 weights
    of the average-pooling replacement.
    """
    cfg = model.cfg
    features = _view_features(model, train, rng)
    encodings = {}
    for view in VIEWS:
        idx = inputs.view_indices[view][rows]
        encodings[view] = encoder.encode_view(
            idx,
            features[view],
            model.enc,
            causal_mask=cfg.causal_mask,
            dropout_rate=cfg.dropout_rate,
            train=train,
            rng=rng,
            ffn_residual=cfg.ffn_residual,
            mask_padding=cfg.mask_padding,
        )
    x_p, x_a, x_d = (encodings[v] for v in VIEWS)

    if cfg.ablation in ("wo_A", "wo_D"):
        e_pred = ad.scale(ad.add(ad.add(x_p, x_a), x_d), 1.0 / 3.0)
        batch = x_p.data.shape[0]
        scores = Tensor(np.full((batch, 3), 1.0 / 3.0))
    else:
        scores, e_pred = fusion.fuse(x_p, x_a, x_d, model.fuse, cfg.fusion_triple_sum)

    score_table = (
        features["debiased"] if cfg.score_against_graph_embeddings else model.enc.item_embeddings
    )
    logits = score_items(e_pred, score_table)
    return scores, e_pred, logits


def forward_user(
    model: Model, inputs: ModelInputs, row: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-user forward with dropout off; returns numpy values."""
    scores, e_pred, logits = forward_batch(model, inputs, np.array([row]), train=False)
    return scores.data[0], e_pred.data[0], logits.data[0]


class Adam:
    """Standard Adam; keeps the padding embedding row frozen at zero."""

    def __init__(self, params: ParamSet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**self.t
        correction2 = 1.0 - b2**self.t
        for name, tensor in self.params.items():
            g = tensor.grad
            if g is None:
                continue
            if name == "item_embeddings":
                g = g.copy()
                g[0] = 0.0  # padding row receives no updates
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if "item_embeddings" in self.params:
            self.params["item_embeddings"].data[0] = 0.0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_recall10: float
    val_ndcg10: float
    wall_ms: float


def train(
    prepared: PreparedData, cfg: TrainConfig
) -> tuple[Model, list[EpochRecord]]:
    """Mini-batch Adam with validation-Recall@10 early stopping.

    Returns the model restored to its best validation epoch plus the
    per-epoch log. A non-finite batch loss aborts with the batch index.
    """
    from . import metrics  # local import: metrics depends on trainer's forward

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    model = build_model(prepared.n_items, cfg, prepared.graphs, rng)
    from .pipeline import split_inputs

    train_inputs = split_inputs(prepared, "train", cfg)
    valid_inputs = split_inputs(prepared, "valid", cfg)
    optimizer = Adam(model.params, cfg.learning_rate)

    n = len(train_inputs.targets)
    log: list[EpochRecord] = []
    best_state = model.params.state_dict()
    best_recall = -1.0
    best_epoch = 0
    since_improved = 0

    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for batch_index, lo in enumerate(range(0, n, cfg.batch_size)):
            rows = order[lo : lo + cfg.batch_size]
            _, _, logits = forward_batch(model, train_inputs, rows, train=True, rng=rng)
            loss = rec_loss(logits, train_inputs.targets[rows])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}"
                )
            model.params.zero_grad()
            ad.backward(loss)
            optimizer.step()
            losses.append(value)

        report = metrics.evaluate_inputs(model, valid_inputs, cfg)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_recall10=report["recall@10"],
            val_ndcg10=report["ndcg@10"],
            wall_ms=(time.perf_counter() - start) * 1000.0,
        )
        log.append(record)

        if record.val_recall10 >= best_recall:
            # ties keep the later epoch (further into the loss descent)
            improved = record.val_recall10 > best_recall
            best_recall = record.val_recall10
            best_epoch = epoch
            best_state = model.params.state_dict()
            since_improved = 0 if improved else since_improved + 1
        else:
            since_improved += 1
        if since_improved >= cfg.patience:
            break

    model.params.load_state_dict(best_state)
    return model, log


def best_epoch(log: list[EpochRecord]) -> EpochRecord:
    return max(log, key=lambda r: (r.val_recall10, r.epoch))
