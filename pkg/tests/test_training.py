import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_pairs, central_difference
from qgnn.errors import NumericalError
from qgnn.events import generate_synthetic
from qgnn.graph import construct_graph
from qgnn.model import GNNModel, ModelConfig
from qgnn.training import (
    EPS,
    AdamState,
    TrainConfig,
    adam_step,
    bce_grad,
    bce_loss,
    evaluate,
    roc_auc,
    split_graphs,
    summarize,
    threshold_metrics,
    train,
    train_step,
)

SECTOR = (-np.pi / 8, np.pi / 8)


def sector_graphs(n, n_tracks=8, offset=0):
    return [construct_graph(generate_synthetic(n_tracks, seed=offset + i, phi_range=SECTOR,
                                               event_id=f"event{offset + i:09d}")) for i in range(n)]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_bce_at_one_half():
    y = np.array([0, 1, 1, 0, 1])
    assert bce_loss(y, np.full(5, 0.5)) == pytest.approx(math.log(2), abs=1e-15)


def test_bce_perfect_and_saturated():
    y = np.array([1, 0, 1])
    assert bce_loss(y, y.astype(float)) == pytest.approx(-math.log(1 - EPS), rel=1e-9)
    wrong = bce_loss(y, 1.0 - y)
    assert math.isfinite(wrong) and wrong == pytest.approx(-math.log(EPS), rel=1e-9)


def test_bce_empty_rejected():
    with pytest.raises(ValueError):
        bce_loss([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0.01, 0.99)), min_size=1, max_size=30))
def test_bce_gradient_matches_finite_difference(pairs):
    y = np.array([float(a) for a, _ in pairs])
    e = np.array([b for _, b in pairs])
    fd = central_difference(lambda p: bce_loss(y, p), e, h=1e-6)
    np.testing.assert_allclose(bce_grad(y, e), fd, rtol=1e-5, atol=1e-8)


def test_bce_gradient_zero_in_clamp():
    np.testing.assert_array_equal(bce_grad([1, 0], [0.0, 1.0]), [0.0, 0.0])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_learning_rate():
    cfg = TrainConfig(learning_rate=0.01)
    params = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(params, {"w": np.array([0.3, -5.0, 1e-3])}, AdamState(), cfg)
    # bias-corrected m/sqrt(v) is sign(g) on the first step
    np.testing.assert_allclose(params["w"], [0.99, -1.99, 2.99], atol=1e-5)


def test_adam_decreases_quadratic():
    cfg = TrainConfig(learning_rate=0.1)
    params, state = {"w": np.array([2.0, -1.5])}, AdamState()
    values = []
    for _ in range(10):
        values.append(float(params["w"] @ params["w"]))
        adam_step(params, {"w": 2 * params["w"]}, state, cfg)
    assert np.all(np.diff(values) < 0)


def test_adam_rejects_non_finite():
    params = {"w": np.ones(2)}
    with pytest.raises(NumericalError):
        adam_step(params, {"w": np.array([1.0, np.nan])}, AdamState(), TrainConfig())
    np.testing.assert_array_equal(params["w"], 1.0)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 20)), min_size=2, max_size=200))
def test_auc_matches_pair_counting(pairs):
    y = np.array([a for a, _ in pairs], dtype=int)
    s = np.array([b / 20 for _, b in pairs])  # coarse scores force ties
    got = roc_auc(y, s)
    if y.min() == y.max():
        assert got is None
    else:
        assert got == pytest.approx(auc_pairs(y, s), abs=1e-12)


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 20000)
    assert abs(roc_auc(y, rng.uniform(size=y.size)) - 0.5) < 0.02


def test_auc_constant_scores():
    assert roc_auc([0, 1, 1, 0], [0.3] * 4) == 0.5


def test_perfect_classifier():
    y = np.array([1, 0, 1, 1, 0])
    s = np.where(y == 1, 0.9, 0.1)
    assert roc_auc(y, s) == 1.0
    assert threshold_metrics(y, s) == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0}


def test_threshold_metrics_undefined():
    m = threshold_metrics([0, 0], [0.1, 0.2])
    assert m["precision"] is None and m["recall"] is None and m["accuracy"] == 1.0


def test_threshold_is_strict():
    assert threshold_metrics([1], [0.5])["recall"] == 0.0


# ---------------------------------------------------------------------------
# splitting and training loop
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n,ratio", [(2, 0.5), (10, 0.5), (11, 0.3), (40, 0.9)])
def test_split_disjoint_and_complete(n, ratio):
    items = list(range(n))
    a, b = split_graphs(items, ratio, seed=3)
    assert a and b
    assert not set(a) & set(b)
    assert sorted(a + b) == items
    assert split_graphs(items, ratio, seed=3) == (a, b)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(split_ratio=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_single_step_decreases_loss_on_average():
    # a small Adam step moves each parameter by about lr against its gradient sign,
    # which lowers the loss of the same graph for most initializations
    graph = sector_graphs(1, n_tracks=10)[0]
    cfg = TrainConfig(learning_rate=1e-3)
    model = GNNModel(ModelConfig(hidden_dim=3, n_qubits=3, n_iterations=1))
    drops = []
    for seed in range(8):
        params = model.init_params(seed)
        before = train_step(model, graph, params, AdamState(), cfg)
        drops.append(before - bce_loss(graph.y, model.forward(graph, params)))
    assert np.mean(drops) > 0 and np.sum(np.array(drops) > 0) >= 6


def test_training_deterministic():
    graphs = sector_graphs(6)
    mcfg = ModelConfig(hidden_dim=3, n_qubits=3, n_iterations=1)
    cfg = TrainConfig(epochs=2, seeds=(0,))
    a, b = train(graphs, mcfg, cfg), train(graphs, mcfg, cfg)
    assert a[0].history == b[0].history
    for k in a[0].best_params:
        np.testing.assert_array_equal(a[0].best_params[k], b[0].best_params[k])


def test_split_independent_of_training_seed():
    graphs = sector_graphs(6)
    records = train(graphs, ModelConfig(hidden_dim=2, n_qubits=2, n_iterations=0, mode="classical"),
                    TrainConfig(epochs=1, seeds=(0, 5)))
    assert records[0].valid_events == records[1].valid_events
    assert not set(records[0].train_events) & set(records[0].valid_events)


def test_classical_training_improves():
    graphs = sector_graphs(12, n_tracks=12)
    cfg = TrainConfig(epochs=5, seeds=(0,), learning_rate=0.01)
    (rec,) = train(graphs, ModelConfig(hidden_dim=4, n_qubits=4, n_iterations=2, mode="classical"), cfg)
    assert len(rec.history) == 5
    assert rec.best_valid_loss < rec.initial_valid_loss
    assert 0 <= rec.best_epoch <= 5
    frame = rec.history_frame()
    assert len(frame) == 10 and set(frame["split"]) == {"train", "valid"}
    best_row = frame[(frame["split"] == "valid") & (frame["epoch"] == rec.best_epoch)] if rec.best_epoch else None
    if best_row is not None:
        assert best_row["loss"].iloc[0] == rec.best_valid_loss


def test_best_params_reproduce_best_loss():
    graphs = sector_graphs(6)
    mcfg = ModelConfig(hidden_dim=3, n_qubits=3, n_iterations=1)
    cfg = TrainConfig(epochs=3, seeds=(1,))
    (rec,) = train(graphs, mcfg, cfg)
    _, valid = split_graphs(graphs, cfg.split_ratio, cfg.split_seed)
    assert evaluate(valid, GNNModel(mcfg), rec.best_params)["loss"] == rec.best_valid_loss


def test_needs_two_graphs():
    with pytest.raises(ValueError):
        train(sector_graphs(1), ModelConfig(), TrainConfig())


def test_summarize():
    graphs = sector_graphs(4)
    records = train(graphs, ModelConfig(hidden_dim=2, n_qubits=2, n_iterations=0, mode="classical"),
                    TrainConfig(epochs=1, seeds=(0, 1, 2)))
    s = summarize(records)
    best = [r.best_valid_loss for r in records]
    assert s["n_seeds"] == 3
    assert s["mean_best_loss"] == pytest.approx(np.mean(best))
    assert s["std_best_loss"] == pytest.approx(np.std(best))
