import csv

import numpy as np
import pytest

from gna.ged import exact_ged
from gna.graph import GraphPair, build_pairs, generate_synthetic, split_dataset
from gna.model import GNAModel
from gna.trainer import TrainConfig, TrainingError, evaluate_loss, label_vocab_size, train, validation_metrics, write_history

TINY = dict(gin_dims=(8, 8), cost_layers=2, ntn_slices=2, batch_size=32)


@pytest.fixture(scope="module")
def split():
    graphs = generate_synthetic(40, (3, 6), 0.25, 3, seed=0)
    pairs = build_pairs(graphs, lambda a, b: exact_ged(a, b).ged, 300, seed=1)
    return split_dataset(pairs, seed=2)


def half_model(split):
    cfg = TrainConfig(**TINY).model_config(label_vocab_size(split.train))
    model = GNAModel(cfg, seed=0)
    model.params["cost.weights"].data[:] = 0.0
    model.params["ntn.w"].data[:] = 0.0
    return model


def test_loss_hand_computed(split):
    model = half_model(split)
    three = list(split.test[:3])
    expect = np.mean([(0.5 - p.gt_score) ** 2 for p in three])
    assert evaluate_loss(three, model) == pytest.approx(expect, rel=1e-12)


def test_loss_zero_when_exact(split):
    model = half_model(split)
    # a ged of half the denominator max(n) + max(m) normalizes to exactly 0.5
    g1, g2, denom = next((p.g1, p.g2, d) for p in split.train
                         if (d := max(p.g1.num_nodes, p.g2.num_nodes) + max(p.g1.num_edges, p.g2.num_edges)) % 2 == 0)
    assert evaluate_loss([GraphPair(g1, g2, denom // 2)], model) == 0.0


def test_loss_non_negative(split):
    model = GNAModel(TrainConfig(**TINY).model_config(3), seed=4)
    assert evaluate_loss(split.validation, model) >= 0.0


def test_empty_set():
    with pytest.raises(ValueError):
        evaluate_loss([], GNAModel(TrainConfig(**TINY).model_config(3)))


def test_loss_order_invariant(split):
    model = GNAModel(TrainConfig(**TINY).model_config(3), seed=1)
    pairs = list(split.validation)
    shuffled = [pairs[i] for i in np.random.default_rng(0).permutation(len(pairs))]
    assert evaluate_loss(pairs, model) == pytest.approx(evaluate_loss(shuffled, model), rel=1e-12)


def test_identical_histories(split):
    cfg = TrainConfig(epochs=2, seed=5, **TINY)
    a, b = train(split, cfg), train(split, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)


def test_loss_decreases_early_epochs(split):
    res = train(split, TrainConfig(epochs=3, lr=0.001, seed=0, gin_dims=(16, 16), cost_layers=4,
                                   ntn_slices=4, batch_size=16))
    losses = [r.train_loss for r in res.history]
    assert losses[0] > losses[1] > losses[2]


def test_best_epoch_by_validation_mae(split):
    res = train(split, TrainConfig(epochs=4, seed=1, **TINY))
    maes = [r.val_mae for r in res.history]
    assert res.best_epoch == int(np.argmin(maes)) + 1
    assert validation_metrics(split.validation, res.model)[0] == pytest.approx(min(maes), rel=1e-12)


def test_resume_from_checkpoint(split, tmp_path):
    res = train(split, TrainConfig(epochs=1, seed=2, **TINY))
    path = tmp_path / "m.json"
    res.model.save(path)
    loaded, _ = GNAModel.load(path)
    assert evaluate_loss(split.test, loaded) == evaluate_loss(split.test, res.model)
    more = train(split, TrainConfig(epochs=1, seed=3, **TINY), model=loaded)
    assert len(more.history) == 1


def test_non_finite_names_batch_and_tau(split):
    model = GNAModel(TrainConfig(**TINY).model_config(3), seed=0)
    model.params["ntn.w"].data[:] = 1e308
    model.params["ntn.b"].data[:] = 1e308
    with pytest.raises(TrainingError, match="tau=0.1.*pairs="):
        train(split, TrainConfig(epochs=1, **TINY), model=model)


def test_history_csv(split, tmp_path):
    res = train(split, TrainConfig(epochs=2, **TINY))
    path = tmp_path / "h.csv"
    write_history(res.history, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["epoch", "train_loss", "val_mae", "val_rho"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2]
    assert float(rows[1][1]) == res.history[0].train_loss


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr=0.0), dict(tau=-1.0), dict(batch_size=0)])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)
