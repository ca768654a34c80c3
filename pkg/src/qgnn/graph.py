"""Hit-graph construction: barrel and pT selection, doublet cuts, diagnostics.

Graph file layout
-----------------
Each graph is a pair ``<stem>.graph.bin`` / ``<stem>.graph.json``. The binary
file is the little-endian concatenation, without padding, of

====================  ========  ==============
array                 dtype     shape
====================  ========  ==============
``X`` (r, phi, z)     float64   (N_V, 3)
``layer``             int32     (N_V,)
``hit_id``            int64     (N_V,)
``edge_in``           int32     (N_E,)
``edge_out``          int32     (N_E,)
``y``                 uint8     (N_E,)
====================  ========  ==============

The JSON sidecar repeats every array's dtype, shape and byte offset and
records the cut configuration, source event id and provenance.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .events import Event

log = logging.getLogger(__name__)

GRAPH_FORMAT = "qgnn-hitgraph"
GRAPH_FORMAT_VERSION = 1
_ARRAYS = (
    ("X", "<f8"),
    ("layer", "<i4"),
    ("hit_id", "<i8"),
    ("edge_in", "<i4"),
    ("edge_out", "<i4"),
    ("y", "u1"),
)


@dataclass(frozen=True)
class CutConfig:
    pt_min: float = 1.0
    eta_max: float = 5.0
    dphi_dr_max: float = 6e-4
    z0_max: float = 100.0
    barrel_volumes: tuple[int, ...] = (8, 13, 17)

    def __post_init__(self):
        object.__setattr__(self, "barrel_volumes", tuple(int(v) for v in self.barrel_volumes))
        for name in ("pt_min", "eta_max", "dphi_dr_max", "z0_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def without_segment_cuts(cls, **kwargs) -> "CutConfig":
        return cls(eta_max=math.inf, dphi_dr_max=math.inf, z0_max=math.inf, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["barrel_volumes"] = list(self.barrel_volumes)
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CutConfig":
        d = {k: (math.inf if v is None else v) for k, v in d.items()}
        return cls(**d)


@dataclass
class HitGraph:
    X: np.ndarray
    edge_in: np.ndarray
    edge_out: np.ndarray
    y: np.ndarray
    layer: np.ndarray
    hit_id: np.ndarray
    event_id: str = ""
    cuts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, 3)
        self.edge_in = np.asarray(self.edge_in, dtype=np.int64)
        self.edge_out = np.asarray(self.edge_out, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.layer = np.asarray(self.layer, dtype=np.int64)
        self.hit_id = np.asarray(self.hit_id, dtype=np.int64)
        n_v = self.X.shape[0]
        if not len(self.edge_in) == len(self.edge_out) == len(self.y):
            raise DataError("edge_in, edge_out and y must share one length")
        if len(self.layer) != n_v or len(self.hit_id) != n_v:
            raise DataError("per-node arrays must have N_V entries")
        if self.n_edges and (min(self.edge_in.min(), self.edge_out.min()) < 0
                             or max(self.edge_in.max(), self.edge_out.max()) >= n_v):
            raise DataError("edge endpoint out of range")

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.y)

    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (R_i, R_o), each N_V x N_E. Only sensible for small graphs."""
        r_i = np.zeros((self.n_nodes, self.n_edges))
        r_o = np.zeros((self.n_nodes, self.n_edges))
        k = np.arange(self.n_edges)
        r_i[self.edge_in, k] = 1.0
        r_o[self.edge_out, k] = 1.0
        return r_i, r_o


def wrap_phi(dphi):
    """Map angle differences into (-pi, pi]."""
    out = np.mod(np.asarray(dphi) + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _passes(value: np.ndarray, threshold: float) -> np.ndarray:
    if math.isinf(threshold):
        return np.ones(value.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        return value < threshold


@dataclass
class _Nodes:
    X: np.ndarray
    layer: np.ndarray
    hit_id: np.ndarray
    pid: np.ndarray


def select_nodes(event: Event, cuts: CutConfig) -> _Nodes:
    """Barrel hits of particles above the pT threshold, ordered by (layer, hit_id).

    Layer ordinals rank the distinct (volume_id, layer_id) pairs present among
    all barrel hits of the event, volumes in ascending id order.
    """
    hits = event.hits
    barrel = hits["volume_id"].isin(cuts.barrel_volumes).to_numpy()
    pid = event.hit_particle_ids()
    keys = sorted(set(zip(hits["volume_id"].to_numpy()[barrel].tolist(),
                          hits["layer_id"].to_numpy()[barrel].tolist())))
    ordinal = {k: i for i, k in enumerate(keys)}
    pt = event.particle_pt()
    labeled = pid != 0
    missing = labeled & ~np.isin(pid, pt.index.to_numpy())
    if missing.any():
        raise DataError(f"event {event.event_id}: hit truth references unknown particle {pid[missing][0]}")
    hit_pt = np.zeros(len(hits))
    hit_pt[labeled] = pt.reindex(pid[labeled]).to_numpy()
    keep = barrel & labeled & (hit_pt > cuts.pt_min)

    sub = hits[keep]
    layer = np.array([ordinal[(v, l)] for v, l in zip(sub["volume_id"], sub["layer_id"])], dtype=np.int64)
    x, y, z = (sub[c].to_numpy(dtype=np.float64) for c in ("x", "y", "z"))
    X = np.column_stack([np.hypot(x, y), np.arctan2(y, x), z])
    hit_id = sub["hit_id"].to_numpy(dtype=np.int64)
    order = np.lexsort((hit_id, layer))
    return _Nodes(X[order], layer[order], hit_id[order], pid[keep][order])


def candidate_doublets(nodes: _Nodes) -> dict[str, np.ndarray]:
    """All node pairs on consecutive layer ordinals with their segment features."""
    ins, outs = [], []
    if len(nodes.layer):
        for lay in range(int(nodes.layer.max())):
            a = np.flatnonzero(nodes.layer == lay)
            b = np.flatnonzero(nodes.layer == lay + 1)
            if len(a) and len(b):
                ii, oo = np.meshgrid(a, b, indexing="ij")
                ins.append(ii.ravel())
                outs.append(oo.ravel())
    edge_in = np.concatenate(ins) if ins else np.zeros(0, dtype=np.int64)
    edge_out = np.concatenate(outs) if outs else np.zeros(0, dtype=np.int64)
    X = nodes.X
    r_in, phi_in, z_in = X[edge_in].T if len(edge_in) else (np.zeros(0),) * 3
    r_out, phi_out, z_out = X[edge_out].T if len(edge_out) else (np.zeros(0),) * 3
    dr = r_out - r_in
    dz = z_out - z_in
    dphi = wrap_phi(phi_out - phi_in)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = dz / dr
        eta = np.arcsinh(slope)
        dphi_dr = np.abs(dphi) / np.abs(dr)
        z0 = z_in - r_in * slope
    pid_in, pid_out = nodes.pid[edge_in], nodes.pid[edge_out]
    return {
        "edge_in": edge_in,
        "edge_out": edge_out,
        "eta": eta,
        "dphi_dr": dphi_dr,
        "z0": z0,
        "true": (pid_in == pid_out) & (pid_in != 0),
    }


def construct_graph(event: Event, cuts: CutConfig = CutConfig()) -> HitGraph:
    nodes = select_nodes(event, cuts)
    if len(nodes.layer) == 0:
        log.warning("event %s: no hits survive the barrel and pT selection", event.event_id)
    cand = candidate_doublets(nodes)
    keep = (
        _passes(np.abs(cand["eta"]), cuts.eta_max)
        & _passes(cand["dphi_dr"], cuts.dphi_dr_max)
        & _passes(np.abs(cand["z0"]), cuts.z0_max)
    )
    return HitGraph(
        X=nodes.X,
        edge_in=cand["edge_in"][keep],
        edge_out=cand["edge_out"][keep],
        y=cand["true"][keep].astype(np.float64),
        layer=nodes.layer,
        hit_id=nodes.hit_id,
        event_id=event.event_id,
        cuts=cuts.to_dict(),
    )


def _node_pids(graph: HitGraph, event: Event) -> np.ndarray:
    lookup = pd.Series(event.truth["particle_id"].to_numpy(), index=event.truth["hit_id"].to_numpy())
    return lookup.reindex(graph.hit_id).fillna(0).to_numpy(dtype=np.int64)


def true_doublet_count(graph: HitGraph, event: Event) -> int:
    """True consecutive-layer doublets among the graph's nodes, before segment cuts."""
    pid = _node_pids(graph, event)
    total = 0
    for lay in range(int(graph.layer.max()) if graph.n_nodes else 0):
        a = pd.Series(pid[(graph.layer == lay) & (pid != 0)]).value_counts()
        b = pd.Series(pid[(graph.layer == lay + 1) & (pid != 0)]).value_counts()
        common = a.index.intersection(b.index)
        total += int((a[common] * b[common]).sum())
    return total


def efficiency(graph: HitGraph, event: Event) -> float | None:
    """Selected true segments / true segments before cuts; None when undefined."""
    denom = true_doublet_count(graph, event)
    if denom == 0:
        return None
    return float(graph.y.sum()) / denom


def purity(graph: HitGraph) -> float | None:
    if graph.n_edges == 0:
        return None
    return float(graph.y.sum()) / graph.n_edges


def label_soundness_violations(graph: HitGraph, event: Event) -> int:
    pid = _node_pids(graph, event)
    pos = graph.y == 1
    a, b = pid[graph.edge_in[pos]], pid[graph.edge_out[pos]]
    return int(np.count_nonzero((a != b) | (a == 0)))


def selection_histograms(event: Event, cuts: CutConfig = CutConfig(), n_bins: int = 50) -> pd.DataFrame:
    """Binned |dphi/dr| and z0 of all candidate doublets, split true / fake.

    Finite ranges span three times the cut (z0 symmetric about 0); values
    outside land in open-ended under/overflow rows so totals are conserved.
    Cut values are in the ``threshold`` column.
    """
    nodes = select_nodes(event, cuts)
    cand = candidate_doublets(nodes)
    true = cand["true"]
    frames = []
    specs = (
        ("dphi_dr", cand["dphi_dr"], cuts.dphi_dr_max, 0.0),
        ("z0", cand["z0"], cuts.z0_max, None),
    )
    for name, values, thr, lo in specs:
        span = 3 * thr if math.isfinite(thr) else max(float(np.nanmax(np.abs(values), initial=1.0)), 1.0)
        lower = -span if lo is None else lo
        inner = np.linspace(lower, span, n_bins + 1)
        edges = np.concatenate([[-np.inf], inner, [np.inf]])
        vals = np.nan_to_num(values, nan=np.inf, posinf=np.inf, neginf=-np.inf)
        idx = np.searchsorted(edges, vals, side="right") - 1
        idx = np.clip(idx, 0, len(edges) - 2)
        t_counts = np.bincount(idx[true], minlength=len(edges) - 1)
        f_counts = np.bincount(idx[~true], minlength=len(edges) - 1)
        frames.append(pd.DataFrame({
            "quantity": name,
            "bin_lo": edges[:-1],
            "bin_hi": edges[1:],
            "true": t_counts,
            "fake": f_counts,
            "threshold": thr,
        }))
    return pd.concat(frames, ignore_index=True)


def graph_summary(graph: HitGraph, event: Event) -> dict:
    return {
        "event_id": graph.event_id,
        "N_V": graph.n_nodes,
        "N_E": graph.n_edges,
        "n_true": int(graph.y.sum()),
        "efficiency": efficiency(graph, event),
        "purity": purity(graph),
    }


def write_graph(graph: HitGraph, stem, provenance: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_name(stem.name + ".graph.bin")
    json_path = stem.with_name(stem.name + ".graph.json")
    arrays = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, dtype in _ARRAYS:
            data = np.ascontiguousarray(getattr(graph, name), dtype=np.dtype(dtype))
            fh.write(data.tobytes())
            arrays.append({"name": name, "dtype": dtype, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes
    meta = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_FORMAT_VERSION,
        "byte_order": "little",
        "event_id": graph.event_id,
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "arrays": arrays,
        "cuts": graph.cuts,
        "provenance": provenance or {},
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def read_graph(path) -> HitGraph:
    """Read a graph from its ``.graph.json``, ``.graph.bin`` or common stem."""
    path = Path(path)
    name = path.name
    for suffix in (".graph.json", ".graph.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    stem = path.with_name(name)
    json_path = stem.with_name(name + ".graph.json")
    bin_path = stem.with_name(name + ".graph.bin")
    if not json_path.exists() or not bin_path.exists():
        raise DataError(f"graph files missing for {stem}")
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"bad graph sidecar {json_path}: {exc}") from exc
    if meta.get("format") != GRAPH_FORMAT:
        raise DataError(f"{json_path} is not a {GRAPH_FORMAT} file")
    blob = bin_path.read_bytes()
    arrays = {}
    for spec in meta["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = spec["offset"] + count * dtype.itemsize
        if end > len(blob):
            raise DataError(f"{bin_path} is truncated")
        arrays[spec["name"]] = np.frombuffer(blob, dtype=dtype, count=count, offset=spec["offset"]).reshape(spec["shape"])
    return HitGraph(
        X=arrays["X"], edge_in=arrays["edge_in"], edge_out=arrays["edge_out"], y=arrays["y"],
        layer=arrays["layer"], hit_id=arrays["hit_id"], event_id=meta.get("event_id", ""),
        cuts=meta.get("cuts", {}),
    )
