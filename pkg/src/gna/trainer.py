"""Mini-batch MSE training with validation-based model selection."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .graph import DatasetSplit, GraphPair
from .metrics import mae, spearman_rho
from .model import GNAModel, GnaConfig, make_batch

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.001
    weight_decay: float = 5e-4
    tau: float = 0.1
    sinkhorn_iters: int = 20
    seed: int = 0
    no_gumbel_sinkhorn: bool = False
    no_add_delete_cost: bool = False
    gin_dims: tuple[int, ...] = (32, 64, 128)
    cost_layers: int = 16
    ntn_slices: int = 16

    def __post_init__(self):
        self.gin_dims = tuple(int(d) for d in self.gin_dims)
        for name in ("epochs", "batch_size", "sinkhorn_iters", "cost_layers", "ntn_slices"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0 or self.tau <= 0 or self.weight_decay < 0:
            raise ValueError("lr and tau must be positive, weight_decay non-negative")

    def model_config(self, input_dim: int) -> GnaConfig:
        return GnaConfig(
            input_dim=input_dim,
            gin_dims=self.gin_dims,
            cost_layers=self.cost_layers,
            ntn_slices=self.ntn_slices,
            tau=self.tau,
            sinkhorn_iters=self.sinkhorn_iters,
            matching="softmax" if self.no_gumbel_sinkhorn else "gumbel_sinkhorn",
            pad=not self.no_add_delete_cost,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gin_dims"] = list(self.gin_dims)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_rho: float


@dataclass
class TrainResult:
    model: GNAModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def label_vocab_size(pairs: Sequence[GraphPair]) -> int:
    top = -1
    for p in pairs:
        for g in (p.g1, p.g2):
            if g.node_labels:
                top = max(top, max(g.node_labels))
    return max(1, top + 1)


def evaluate_loss(pairs: Sequence[GraphPair], model: GNAModel, batch_size: int = 256) -> float:
    """Noise-free MSE between predicted and ground-truth scores."""
    if len(pairs) == 0:
        raise ValueError("evaluate_loss: empty pair set")
    scores = model.predict_scores(pairs, batch_size)
    gt = np.array([p.gt_score for p in pairs])
    return float(np.mean((scores - gt) ** 2))


def validation_metrics(pairs: Sequence[GraphPair], model: GNAModel) -> tuple[float, float]:
    pred = model.predict_geds(pairs)
    true = np.array([p.ged for p in pairs], dtype=np.float64)
    rho = spearman_rho(pred, true) if len(pairs) >= 2 else 0.0
    return mae(pred, true), rho


def train(
    split: DatasetSplit,
    cfg: TrainConfig,
    model: Optional[GNAModel] = None,
    input_dim: Optional[int] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Adam on the batch-mean squared score error; returns the best-validation model."""
    train_pairs = list(split.train)
    val_pairs = list(split.validation)
    if not train_pairs or not val_pairs:
        raise ValueError("train: need non-empty training and validation sets")
    init_seq, shuffle_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    if model is None:
        if input_dim is None:
            input_dim = label_vocab_size(train_pairs + val_pairs + list(split.test))
        init_seed = int(init_seq.generate_state(1)[0])
        model = GNAModel(cfg.model_config(input_dim), seed=init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    opt = T.Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    history: list[EpochRecord] = []
    best: Optional[GNAModel] = None
    best_mae = np.inf
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(chunk, model.config)
            opt.zero_grad()
            try:
                loss = model.loss(batch, train=True, rng=noise_rng)
                loss.backward()
            except T.NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite values in epoch {epoch} (tau={model.config.tau}, "
                    f"pairs={batch.ids[:8]}{'...' if batch.size > 8 else ''}): {exc}"
                ) from exc
            opt.step()
            total += loss.item() * batch.size
        val_mae, val_rho = validation_metrics(val_pairs, model)
        rec = EpochRecord(epoch, total / len(train_pairs), val_mae, val_rho)
        history.append(rec)
        logger.info("epoch %d train_loss=%.5f val_mae=%.4f val_rho=%.4f",
                    epoch, rec.train_loss, val_mae, val_rho)
        if on_epoch is not None:
            on_epoch(rec)
        if val_mae < best_mae:
            best_mae, best_epoch = val_mae, epoch
            best = model.copy()
    return TrainResult(best if best is not None else model, history, best_epoch)


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_mae", "val_rho"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_mae), repr(r.val_rho)])
