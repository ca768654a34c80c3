"""Central finite-difference checks of the hand-written reverse pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .graph import HitGraph
from .model import GNNModel, ModelConfig


def layered_graph(n_edges: int = 12, seed: int = 0, nodes_per_layer: int = 3) -> HitGraph:
    """Small detector-like graph: consecutive layers fully connected, first ``n_edges`` kept."""
    rng = np.random.default_rng(seed)
    n_layers = 2
    while (n_layers - 1) * nodes_per_layer**2 < n_edges:
        n_layers += 1
    layer = np.repeat(np.arange(n_layers), nodes_per_layer)
    n_nodes = layer.size
    pairs = [(a, b) for a in range(n_nodes) for b in range(n_nodes) if layer[b] == layer[a] + 1][:n_edges]
    edge_in = np.array([a for a, _ in pairs], dtype=np.int64)
    edge_out = np.array([b for _, b in pairs], dtype=np.int64)
    X = np.column_stack([
        100.0 + 300.0 * layer + rng.normal(0.0, 10.0, n_nodes),
        rng.uniform(-3.0, 3.0, n_nodes),
        rng.normal(0.0, 300.0, n_nodes),
    ])
    y = rng.integers(0, 2, edge_in.size).astype(np.uint8)
    return HitGraph(X, edge_in, edge_out, y, layer.astype(np.int64), np.arange(1, n_nodes + 1, dtype=np.int64),
                    event_id=f"gradcheck-{seed}")


@dataclass
class GradCheckResult:
    label: str
    n_params: int
    max_rel_err: float
    tolerance: float
    table: pd.DataFrame

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tolerance)


def relative_error(analytic, numeric, floor: float = 0.0) -> np.ndarray:
    a, f = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.abs(a - f) / denom
    return np.where(denom == 0.0, 0.0, out)


def gradient_check(cfg: ModelConfig, graph: HitGraph, seed: int = 0, step: float = 1e-5,
                   tolerance: float = 1e-5, floor: float = 0.0, label: str = "") -> GradCheckResult:
    """Compare d(w . e)/dp from the reverse pass with central differences, one parameter at a time.

    ``w`` is a fixed random cotangent so every output edge contributes.
    """
    model = GNNModel(cfg)
    params = model.init_params(seed)
    w = np.random.default_rng([seed, 7]).normal(size=graph.n_edges)
    e, tape = model.forward(graph, params, record=True)
    grads = model.backward(graph, params, tape, w)

    rows = []
    for key in sorted(params):
        flat = params[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(w @ model.forward(graph, params))
            flat[i] = orig - step
            f_minus = float(w @ model.forward(graph, params))
            flat[i] = orig
            rows.append((key, i, float(grads[key].reshape(-1)[i]), (f_plus - f_minus) / (2 * step)))
    table = pd.DataFrame(rows, columns=["param", "index", "analytic", "numeric"])
    table["rel_err"] = relative_error(table["analytic"], table["numeric"], floor)
    worst = float(table["rel_err"].max()) if len(table) else 0.0
    return GradCheckResult(label or cfg.edge_pqc, len(table), worst, tolerance, table)
