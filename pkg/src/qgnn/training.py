"""BCE training with Adam, threshold metrics, ROC AUC and grid sweeps."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .errors import NumericalError
from .graph import HitGraph
from .model import GNNModel, ModelConfig

EPS = 1e-7
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    split_ratio: float = 0.5
    split_seed: int = 0
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


# -- loss ------------------------------------------------------------------------

def bce_loss(y, e_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("BCE loss of an empty edge set")
    p = np.clip(np.asarray(e_hat, dtype=np.float64), EPS, 1.0 - EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_grad(y, e_hat) -> np.ndarray:
    """dL/de_hat; zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64)
    e = np.asarray(e_hat, dtype=np.float64)
    inside = (e > EPS) & (e < 1.0 - EPS)
    safe = np.where(inside, e, 0.5)
    return np.where(inside, (safe - y) / (safe * (1.0 - safe)), 0.0) / y.size


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {key} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for key, g in grads.items():
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        v = state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        params[key] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# -- metrics ---------------------------------------------------------------------

def roc_auc(y, scores) -> float | None:
    """Trapezoidal area under the ROC curve; ties share one threshold step.

    Returns None when only one class is present.
    """
    y = np.asarray(y, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(_trapezoid(tpr, fpr))


def threshold_metrics(y, scores, threshold: float = 0.5) -> dict:
    y = np.asarray(y, dtype=bool)
    pred = np.asarray(scores) > threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return {
        "accuracy": float(np.mean(pred == y)) if y.size else None,
        "precision": tp / (tp + fp) if tp + fp else None,
        "recall": tp / (tp + fn) if tp + fn else None,
    }


def evaluate(graphs, model: GNNModel, params, threshold: float = 0.5) -> dict:
    """Mean per-graph loss plus metrics over the pooled edges of ``graphs``."""
    losses, ys, scores = [], [], []
    for g in graphs:
        if g.n_edges == 0:
            continue
        e = model.forward(g, params)
        losses.append(bce_loss(g.y, e))
        ys.append(g.y)
        scores.append(e)
    y = np.concatenate(ys) if ys else np.zeros(0)
    s = np.concatenate(scores) if scores else np.zeros(0)
    out = {"loss": float(np.mean(losses)) if losses else None}
    out.update(threshold_metrics(y, s, threshold))
    out["auc"] = roc_auc(y, s)
    return out


# -- training --------------------------------------------------------------------

@dataclass
class TrainRecord:
    seed: int
    history: list[dict]
    initial_valid_loss: float
    best_valid_loss: float
    best_epoch: int
    wall_clock: float
    best_params: dict = field(repr=False, default_factory=dict)
    train_events: list[str] = field(default_factory=list)
    valid_events: list[str] = field(default_factory=list)

    def history_frame(self) -> pd.DataFrame:
        rows = []
        for h in self.history:
            for split in ("train", "valid"):
                m = h[split]
                rows.append({"epoch": h["epoch"], "split": split, "loss": m["loss"], "acc": m["accuracy"],
                             "prec": m["precision"], "recall": m["recall"], "auc": m["auc"]})
        df = pd.DataFrame(rows, columns=["epoch", "split", "loss", "acc", "prec", "recall", "auc"])
        return df.astype({c: float for c in ("loss", "acc", "prec", "recall", "auc")})


def split_graphs(graphs, ratio: float, seed: int):
    """Seeded shuffle split into disjoint (train, valid) lists."""
    n = len(graphs)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(n * ratio)), 1), n - 1)
    return [graphs[i] for i in sorted(perm[:n_train])], [graphs[i] for i in sorted(perm[n_train:])]


def train_step(model: GNNModel, graph: HitGraph, params, state: AdamState, cfg: TrainConfig) -> float:
    e, tape = model.forward(graph, params, record=True)
    loss = bce_loss(graph.y, e)
    grads = model.backward(graph, params, tape, bce_grad(graph.y, e))
    adam_step(params, grads, state, cfg)
    return loss


def train_seed(train_set, valid_set, model_cfg: ModelConfig, cfg: TrainConfig, seed: int,
               progress=None) -> TrainRecord:
    model = GNNModel(model_cfg)
    params = model.init_params(seed)
    state = AdamState()
    order_rng = np.random.default_rng([seed, 1])
    start = time.perf_counter()
    initial = evaluate(valid_set, model, params, cfg.threshold)
    best_loss, best_epoch, best_params = initial["loss"], 0, {k: v.copy() for k, v in params.items()}
    history = []
    for epoch in range(1, cfg.epochs + 1):
        for idx in order_rng.permutation(len(train_set)):
            g = train_set[idx]
            if g.n_edges:
                train_step(model, g, params, state, cfg)
        train_m = evaluate(train_set, model, params, cfg.threshold)
        valid_m = evaluate(valid_set, model, params, cfg.threshold)
        if not math.isfinite(valid_m["loss"]):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train": train_m, "valid": valid_m})
        if valid_m["loss"] < best_loss:
            best_loss, best_epoch = valid_m["loss"], epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if progress:
            progress(seed, epoch, train_m, valid_m)
    return TrainRecord(
        seed=seed,
        history=history,
        initial_valid_loss=initial["loss"],
        best_valid_loss=best_loss,
        best_epoch=best_epoch,
        wall_clock=time.perf_counter() - start,
        best_params=best_params,
        train_events=[g.event_id for g in train_set],
        valid_events=[g.event_id for g in valid_set],
    )


def train(graphs, model_cfg: ModelConfig, cfg: TrainConfig, progress=None, seeds=None) -> list[TrainRecord]:
    """One TrainRecord per seed; the split depends only on ``cfg.split_seed``."""
    if len(graphs) < 2:
        raise ValueError("training needs at least 2 graphs")
    train_set, valid_set = split_graphs(graphs, cfg.split_ratio, cfg.split_seed)
    seeds = cfg.seeds if seeds is None else seeds
    return [train_seed(train_set, valid_set, model_cfg, cfg, s, progress) for s in seeds]


def summarize(records) -> dict:
    best = np.array([r.best_valid_loss for r in records])
    return {
        "mean_best_loss": float(best.mean()),
        "std_best_loss": float(best.std(ddof=0)),
        "mean_initial_loss": float(np.mean([r.initial_valid_loss for r in records])),
        "n_seeds": len(records),
    }
