"""Attention-passing GNN with hybrid dense/QNN inner networks.

Forward pass::

    v = x (+) sigmoid(W_in x + b_in)
    repeat N_I times:
        e = EdgeNet(v[edge_out] (+) v[edge_in])
        v = x (+) NodeNet(m_in (+) m_out (+) v)
    return EdgeNet(v[edge_out] (+) v[edge_in])

with ``m_in[j] = sum_{k: edge_in[k]=j} e_k v[edge_out[k]]`` and
``m_out[j] = sum_{k: edge_out[k]=j} e_k v[edge_in[k]]``. Each Edge/Node
network is ``sigmoid . FC2 . core . sigmoid . FC1`` where ``core`` is the QNN
(hybrid mode) or a sigmoid dense layer ``N_Q -> N_Q`` (classical mode).

Parameters live in a flat ``dict[str, ndarray]``; gradients use the same keys.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .circuits import HIERARCHICAL, EncodingSpec, PqcSpec, QnnSpec, build_qnn, canonical_family
from .errors import DataError
from .graph import HitGraph
from .statevector import CircuitTemplate, adjoint_vjp_batch, expectations_batch, run_batch

PRESETS = {
    "circuit10": ("circuit10", "circuit10"),
    "circuit19": ("circuit19", "circuit19"),
    "mps-10": ("mps", "circuit10"),
    "ttn-10": ("ttn", "circuit10"),
}


def resolve_preset(label: str) -> tuple[str, str]:
    key = str(label).strip().lower().replace(" ", "").replace("_", "")
    key = {"circuit10": "circuit10", "circuit19": "circuit19", "mps-10": "mps-10", "ttn-10": "ttn-10",
           "mps10": "mps-10", "ttn10": "ttn-10"}.get(key, key)
    if key not in PRESETS:
        raise ValueError(f"unknown preset {label!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[key]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 4
    n_qubits: int = 4
    n_iterations: int = 3
    n_layers: int = 1
    edge_pqc: str = "circuit10"
    node_pqc: str = "circuit10"
    encoding_axis: str = "Y"
    mode: str = "hybrid"
    r_scale: float = 1100.0
    phi_scale: float = math.pi
    z_scale: float = 1100.0

    def __post_init__(self):
        object.__setattr__(self, "edge_pqc", canonical_family(self.edge_pqc))
        object.__setattr__(self, "node_pqc", canonical_family(self.node_pqc))
        object.__setattr__(self, "encoding_axis", str(self.encoding_axis).upper())
        if self.mode not in ("hybrid", "classical"):
            raise ValueError(f"mode must be 'hybrid' or 'classical', got {self.mode!r}")
        if self.node_pqc in HIERARCHICAL:
            raise ValueError("node network needs a layered PQC measuring every qubit")
        if min(self.hidden_dim, self.n_qubits, self.n_layers) < 1 or self.n_iterations < 0:
            raise ValueError("dimensions must be positive and n_iterations >= 0")
        EncodingSpec(self.encoding_axis)
        PqcSpec(self.edge_pqc, self.n_qubits, self.n_layers)
        PqcSpec(self.node_pqc, self.n_qubits, self.n_layers)

    @classmethod
    def from_preset(cls, label: str, **kwargs) -> "ModelConfig":
        edge, node = resolve_preset(label)
        return cls(edge_pqc=edge, node_pqc=node, **kwargs)

    @property
    def feature_dim(self) -> int:
        return 3 + self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenseLayer:
    """Affine map followed by a sigmoid; parameters are looked up by prefix."""

    prefix: str
    n_in: int
    n_out: int

    def init(self, rng, params: dict) -> None:
        limit = math.sqrt(6.0 / (self.n_in + self.n_out))
        params[self.prefix + ".W"] = rng.uniform(-limit, limit, (self.n_out, self.n_in))
        params[self.prefix + ".b"] = np.zeros(self.n_out)

    def forward(self, params, a):
        return sigmoid(a @ params[self.prefix + ".W"].T + params[self.prefix + ".b"])

    def backward(self, params, a, s, d_s, grads):
        dz = d_s * s * (1.0 - s)
        _acc(grads, self.prefix + ".W", dz.T @ a)
        _acc(grads, self.prefix + ".b", dz.sum(axis=0))
        return dz @ params[self.prefix + ".W"]


def _acc(grads: dict, key: str, value) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = np.array(value, dtype=np.float64)


@dataclass
class HybridNet:
    prefix: str
    n_in: int
    n_out: int
    n_qubits: int
    template: CircuitTemplate | None  # None in classical mode
    fc1: DenseLayer = field(init=False)
    core: DenseLayer | None = field(init=False)
    fc2: DenseLayer = field(init=False)

    def __post_init__(self):
        self.fc1 = DenseLayer(self.prefix + ".fc1", self.n_in, self.n_qubits)
        if self.template is None:
            self.core = DenseLayer(self.prefix + ".core", self.n_qubits, self.n_qubits)
            core_out = self.n_qubits
        else:
            self.core = None
            core_out = self.template.n_outputs
        self.fc2 = DenseLayer(self.prefix + ".fc2", core_out, self.n_out)

    @property
    def theta_key(self) -> str:
        return self.prefix + ".qnn.theta"

    def init(self, rng, params: dict) -> None:
        self.fc1.init(rng, params)
        if self.template is None:
            self.core.init(rng, params)
        else:
            params[self.theta_key] = rng.uniform(0.0, 2 * np.pi, self.template.n_params)
        self.fc2.init(rng, params)

    def forward(self, params, a):
        h = self.fc1.forward(params, a)
        if self.template is None:
            q = self.core.forward(params, h)
            amps = None
        elif len(h) == 0:
            amps, q = None, np.zeros((0, self.template.n_outputs))
        else:
            amps = run_batch(self.template, params[self.theta_key], h)
            q = expectations_batch(self.template, amps)
        out = self.fc2.forward(params, q)
        return out, (a, h, amps, q, out)

    def backward(self, params, cache, d_out, grads):
        a, h, amps, q, out = cache
        d_q = self.fc2.backward(params, q, out, d_out, grads)
        if self.template is None:
            d_h = self.core.backward(params, h, q, d_q, grads)
        elif len(h) == 0:
            d_h = np.zeros_like(h)
            _acc(grads, self.theta_key, np.zeros(self.template.n_params))
        else:
            d_theta, d_h = adjoint_vjp_batch(self.template, params[self.theta_key], h, d_q, final=amps)
            _acc(grads, self.theta_key, d_theta)
        return self.fc1.backward(params, a, h, d_h, grads)


class GNNModel:
    """Input network plus one shared Edge network and one Node network."""

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        f = c.feature_dim
        self.input_net = DenseLayer("input", 3, c.hidden_dim)
        edge_t = node_t = None
        if c.mode == "hybrid":
            enc = EncodingSpec(c.encoding_axis)
            edge_t = build_qnn(QnnSpec(PqcSpec(c.edge_pqc, c.n_qubits, c.n_layers), enc))
            node_t = build_qnn(QnnSpec(PqcSpec(c.node_pqc, c.n_qubits, c.n_layers), enc))
        self.edge_net = HybridNet("edge", 2 * f, 1, c.n_qubits, edge_t)
        self.node_net = HybridNet("node", 3 * f, c.hidden_dim, c.n_qubits, node_t)
        self.scales = np.array([c.r_scale, c.phi_scale, c.z_scale])

    def init_params(self, seed_or_rng) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed_or_rng)
        params: dict[str, np.ndarray] = {}
        self.input_net.init(rng, params)
        self.edge_net.init(rng, params)
        self.node_net.init(rng, params)
        return params

    def param_count(self, params=None) -> int:
        params = params if params is not None else self.init_params(0)
        return int(sum(p.size for p in params.values()))

    # -- building blocks ------------------------------------------------------

    def scaled_inputs(self, graph: HitGraph) -> np.ndarray:
        return graph.X / self.scales

    def input_network(self, params, x):
        return np.concatenate([x, self.input_net.forward(params, x)], axis=1)

    def edge_network(self, params, v, graph: HitGraph):
        a = np.concatenate([v[graph.edge_out], v[graph.edge_in]], axis=1)
        out, cache = self.edge_net.forward(params, a)
        return out[:, 0], cache

    def aggregate(self, v, e, graph: HitGraph):
        m_in = np.zeros_like(v)
        m_out = np.zeros_like(v)
        np.add.at(m_in, graph.edge_in, e[:, None] * v[graph.edge_out])
        np.add.at(m_out, graph.edge_out, e[:, None] * v[graph.edge_in])
        return m_in, m_out

    def node_network(self, params, v, e, graph: HitGraph, x):
        m_in, m_out = self.aggregate(v, e, graph)
        hidden, cache = self.node_net.forward(params, np.concatenate([m_in, m_out, v], axis=1))
        return np.concatenate([x, hidden], axis=1), cache

    # -- full model ------------------------------------------------------------

    def forward(self, graph: HitGraph, params, record: bool = False):
        x = self.scaled_inputs(graph)
        v = self.input_network(params, x)
        tape = {"x": x, "v": [v], "e": [], "edge": [], "node": []}
        for _ in range(self.config.n_iterations):
            e, ecache = self.edge_network(params, v, graph)
            v, ncache = self.node_network(params, v, e, graph, x)
            if record:
                tape["e"].append(e)
                tape["edge"].append(ecache)
                tape["node"].append(ncache)
                tape["v"].append(v)
        e, ecache = self.edge_network(params, v, graph)
        tape["edge"].append(ecache)
        return (e, tape) if record else e

    def _edge_backward(self, params, cache, d_e, graph, grads, d_v):
        f = self.config.feature_dim
        d_a = self.edge_net.backward(params, cache, d_e[:, None], grads)
        np.add.at(d_v, graph.edge_out, d_a[:, :f])
        np.add.at(d_v, graph.edge_in, d_a[:, f:])

    def backward(self, graph: HitGraph, params, tape, d_e_final) -> dict[str, np.ndarray]:
        """Reverse-mode gradients of ``sum(d_e_final * e_final)`` w.r.t. all params."""
        f = self.config.feature_dim
        grads = {k: np.zeros_like(p) for k, p in params.items()}
        d_v = np.zeros((graph.n_nodes, f))
        self._edge_backward(params, tape["edge"][-1], np.asarray(d_e_final, dtype=np.float64), graph, grads, d_v)
        for t in reversed(range(self.config.n_iterations)):
            v, e = tape["v"][t], tape["e"][t]
            # coordinates re-attached after each node update carry no gradient
            d_hidden = d_v[:, 3:]
            d_a = self.node_net.backward(params, tape["node"][t], d_hidden, grads)
            d_min, d_mout, d_vdirect = d_a[:, :f], d_a[:, f:2 * f], d_a[:, 2 * f:]
            d_v = d_vdirect.copy()
            d_e = np.einsum("kf,kf->k", d_min[graph.edge_in], v[graph.edge_out])
            d_e += np.einsum("kf,kf->k", d_mout[graph.edge_out], v[graph.edge_in])
            np.add.at(d_v, graph.edge_out, e[:, None] * d_min[graph.edge_in])
            np.add.at(d_v, graph.edge_in, e[:, None] * d_mout[graph.edge_out])
            self._edge_backward(params, tape["edge"][t], d_e, graph, grads, d_v)
        x = tape["x"]
        hidden = tape["v"][0][:, 3:]
        self.input_net.backward(params, x, hidden, d_v[:, 3:], grads)
        return grads


# -- checkpoints ------------------------------------------------------------------

CHECKPOINT_FORMAT = "qgnn-checkpoint"


def save_checkpoint(path, config: ModelConfig, params: dict, **meta) -> tuple[Path, Path]:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (float64 LE blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    json_path, bin_path = path.with_suffix(".json"), path.with_suffix(".bin")
    layout, offset = [], 0
    with open(bin_path, "wb") as fh:
        for key in sorted(params):
            arr = np.ascontiguousarray(params[key], dtype="<f8")
            fh.write(arr.tobytes())
            layout.append({"name": key, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    header = {
        "format": CHECKPOINT_FORMAT,
        "model": config.to_dict(),
        "scaling": {"r": config.r_scale, "phi": config.phi_scale, "z": config.z_scale},
        "params": layout,
        **meta,
    }
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return json_path, bin_path


def load_checkpoint(path) -> tuple[ModelConfig, dict, dict]:
    path = Path(path)
    json_path, bin_path = path.with_suffix(".json"), path.with_suffix(".bin")
    if not json_path.exists() or not bin_path.exists():
        raise DataError(f"checkpoint files missing for {path}")
    header = json.loads(json_path.read_text())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{json_path} is not a checkpoint header")
    blob = bin_path.read_bytes()
    params = {}
    for item in header["params"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        params[item["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=item["offset"]).reshape(
            item["shape"]).copy()
    return ModelConfig(**header["model"]), params, header


def with_mode(config: ModelConfig, mode: str) -> ModelConfig:
    return replace(config, mode=mode)
