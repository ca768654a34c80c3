"""Run configuration: nested YAML sections, strict keys, dotted overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from . import __version__

DEFAULTS: dict = {
    "paths": {
        "events": [],
        "events_dir": "events",
        "graphs_dir": "graphs",
        "out_dir": "out",
        "checkpoint": "",
    },
    "generate": {
        "n_events": 20,
        "n_tracks": 20,
        "seed": 0,
        "b_field": 2.0,
        "pt_range": [1.0, 5.0],
        "eta_range": 1.0,
        "vertex_sigma": 50.0,
        "smear": 0.1,
        "half_length": 1100.0,
        "n_noise": 0,
        "phi_range": [-0.39269908169872414, 0.39269908169872414],
        "radii": [32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0],
    },
    "cuts": {
        "pt_min": 1.0,
        "eta_max": 5.0,
        "dphi_dr_max": 6e-4,
        "z0_max": 100.0,
        "barrel_volumes": [8, 13, 17],
        "histogram_bins": 50,
    },
    "model": {
        "preset": "",
        "hidden_dim": 4,
        "n_qubits": 4,
        "n_iterations": 3,
        "n_layers": 1,
        "edge_pqc": "circuit10",
        "node_pqc": "circuit10",
        "encoding_axis": "Y",
        "mode": "hybrid",
        "r_scale": 1100.0,
        "phi_scale": 3.141592653589793,
        "z_scale": 1100.0,
    },
    "train": {
        "learning_rate": 0.01,
        "epochs": 10,
        "seeds": [0, 1, 2, 3, 4],
        "split_ratio": 0.5,
        "split_seed": 0,
        "threshold": 0.5,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
    },
    "sweep": {
        "axis": "hidden_dim",
        "values": [2, 4, 6, 8],
        "modes": ["hybrid", "classical"],
    },
    "descriptors": {
        "families": ["circuit10", "circuit19"],
        "n_qubits": [4],
        "n_layers": [1, 2, 3, 4, 5],
        "n_samples": 5000,
        "n_bins": 75,
        "seeds": [0],
        "reference_input": 0.5,
    },
    "gradcheck": {
        "presets": ["circuit10", "circuit19", "MPS-10", "TTN-10"],
        "hidden_dim": 3,
        "n_qubits": 3,
        "n_iterations": 2,
        "n_layers": 1,
        "n_edges": 12,
        "mode": "hybrid",
        "step": 1e-5,
        "tolerance": 1e-5,
        "floor": 0.0,
        "seed": 0,
    },
    "report": {
        "figures": True,
    },
    "workers": 1,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a section")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``"model.hidden_dim=8"`` -> ``{"model": {"hidden_dim": 8}}`` (YAML-typed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw else ""
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a mapping of sections")
        cfg = _merge(cfg, data)
    for text in overrides:
        cfg = _merge(cfg, parse_override(text))
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def provenance(cfg: dict, seed=None) -> dict:
    out = {"config_hash": config_hash(cfg), "tool": "qgnn", "version": __version__}
    if seed is not None:
        out["seed"] = seed
    return out


def write_resolved(cfg: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return path
