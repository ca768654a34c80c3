"""Detector events: TrackML CSV triplets and a synthetic helix generator."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

HIT_COLUMNS = ("hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id")
PARTICLE_COLUMNS = ("particle_id", "vx", "vy", "vz", "px", "py", "pz", "q", "nhits")
TRUTH_COLUMNS = ("hit_id", "particle_id", "tx", "ty", "tz", "tpx", "tpy", "tpz", "weight")

_REQUIRED = {
    "hits": ("hit_id", "x", "y", "z", "volume_id", "layer_id"),
    "particles": ("particle_id", "px", "py", "pz"),
    "truth": ("hit_id", "particle_id"),
}
_KNOWN = {"hits": HIT_COLUMNS, "particles": PARTICLE_COLUMNS, "truth": TRUTH_COLUMNS}
_INT_COLUMNS = {"hit_id", "volume_id", "layer_id", "module_id", "particle_id", "q", "nhits"}

# TrackML barrel layer radii (mm) and their (volume_id, layer_id) labels
DEFAULT_RADII = (32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0)
_TRACKML_BARREL_IDS = tuple((v, l) for v, n in ((8, 4), (13, 4), (17, 2)) for l in range(2, 2 * n + 1, 2))


@dataclass
class Event:
    hits: pd.DataFrame
    particles: pd.DataFrame
    truth: pd.DataFrame
    event_id: str = ""

    def __post_init__(self):
        if self.hits["hit_id"].duplicated().any():
            raise DataError(f"event {self.event_id}: duplicate hit_id")
        if self.particles["particle_id"].duplicated().any():
            raise DataError(f"event {self.event_id}: duplicate particle_id")
        missing = ~self.truth["hit_id"].isin(self.hits["hit_id"])
        if missing.any():
            bad = self.truth["hit_id"][missing].iloc[0]
            raise DataError(f"event {self.event_id}: truth references unknown hit_id {bad}")

    def hit_particle_ids(self) -> np.ndarray:
        """particle_id for every row of ``hits`` (0 for noise or unlabeled)."""
        lookup = pd.Series(self.truth["particle_id"].to_numpy(), index=self.truth["hit_id"].to_numpy())
        return lookup.reindex(self.hits["hit_id"].to_numpy()).fillna(0).to_numpy(dtype=np.int64)

    def particle_pt(self) -> pd.Series:
        p = self.particles
        return pd.Series(np.hypot(p["px"].to_numpy(), p["py"].to_numpy()), index=p["particle_id"].to_numpy())


def event_paths(prefix) -> tuple[Path, Path, Path]:
    prefix = str(prefix)
    return tuple(Path(f"{prefix}-{kind}.csv") for kind in ("hits", "particles", "truth"))


def _read_table(path: Path, kind: str) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing {kind} file: {path}")
    if os.path.getsize(path) == 0:
        if kind == "truth":
            return pd.DataFrame({"hit_id": pd.Series(dtype=np.int64), "particle_id": pd.Series(dtype=np.int64)})
        raise DataError(f"empty {kind} file: {path}")
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataError(f"malformed {kind} file {path}: {exc}") from exc
    unknown = [c for c in df.columns if c not in _KNOWN[kind]]
    if unknown:
        raise DataError(f"unknown column(s) {unknown} in {path}")
    absent = [c for c in _REQUIRED[kind] if c not in df.columns]
    if absent:
        raise DataError(f"missing column(s) {absent} in {path}")
    for col in df.columns:
        try:
            if col in _INT_COLUMNS:
                df[col] = pd.to_numeric(df[col], errors="raise").astype(np.int64)
            else:
                df[col] = pd.to_numeric(df[col], errors="raise").astype(np.float64)
        except (ValueError, TypeError) as exc:
            raise DataError(f"malformed value in column {col!r} of {path}: {exc}") from exc
    if df.isna().any().any():
        raise DataError(f"malformed row (missing values) in {path}")
    return df


def load_event(paths) -> Event:
    """Load a TrackML triplet from a prefix (``.../event000001000``) or 3 paths."""
    if isinstance(paths, (str, os.PathLike)):
        hits_p, particles_p, truth_p = event_paths(paths)
        event_id = Path(paths).name
    else:
        hits_p, particles_p, truth_p = (Path(p) for p in paths)
        event_id = hits_p.name.rsplit("-", 1)[0]
    return Event(
        hits=_read_table(hits_p, "hits"),
        particles=_read_table(particles_p, "particles"),
        truth=_read_table(truth_p, "truth"),
        event_id=event_id,
    )


def write_event(event: Event, prefix) -> tuple[Path, Path, Path]:
    paths = event_paths(prefix)
    paths[0].parent.mkdir(parents=True, exist_ok=True)
    for df, path in zip((event.hits, event.particles, event.truth), paths):
        df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return paths


def helix_radius_mm(pt_gev: float, b_tesla: float) -> float:
    return pt_gev / (0.3 * b_tesla) * 1000.0


def _layer_ids(n_layers: int) -> list[tuple[int, int]]:
    if n_layers == len(_TRACKML_BARREL_IDS):
        return list(_TRACKML_BARREL_IDS)
    return [(8, 2 * (i + 1)) for i in range(n_layers)]


def generate_synthetic(
    n_tracks: int,
    seed: int,
    radii=DEFAULT_RADII,
    *,
    b_field: float = 2.0,
    pt_range: tuple[float, float] = (1.0, 5.0),
    eta_range: float = 1.0,
    vertex_sigma: float = 50.0,
    smear: float = 0.1,
    half_length: float = 1100.0,
    n_noise: int = 0,
    phi_range: tuple[float, float] = (-np.pi, np.pi),
    event_id: str = "",
) -> Event:
    """Helical tracks from the beamline crossing concentric barrel layers.

    A track crosses layer ``r`` at turning angle ``2 asin(r / 2R)`` with helix
    radius ``R = pT / (0.3 B)``; hits beyond ``|z| > half_length`` are lost.
    Noise hits (particle_id 0) are scattered uniformly over the layers.
    """
    if n_tracks < 1:
        raise ValueError("n_tracks must be >= 1")
    rng = np.random.default_rng(seed)
    radii = np.asarray(radii, dtype=np.float64)
    labels = _layer_ids(len(radii))

    pt = rng.uniform(*pt_range, n_tracks)
    phi0 = rng.uniform(*phi_range, n_tracks)
    charge = rng.choice([-1, 1], n_tracks)
    eta = rng.uniform(-eta_range, eta_range, n_tracks)
    vz = rng.normal(0.0, vertex_sigma, n_tracks)
    cot_theta = np.sinh(eta)

    pid = np.arange(1, n_tracks + 1, dtype=np.int64)
    particles = pd.DataFrame({
        "particle_id": pid,
        "vx": np.zeros(n_tracks), "vy": np.zeros(n_tracks), "vz": vz,
        "px": pt * np.cos(phi0), "py": pt * np.sin(phi0), "pz": pt * cot_theta,
        "q": charge.astype(np.int64),
        "nhits": np.zeros(n_tracks, dtype=np.int64),
    })

    rows = []
    for t in range(n_tracks):
        big_r = helix_radius_mm(pt[t], b_field)
        for k, r in enumerate(radii):
            if r > 2 * big_r:
                break
            half_turn = np.arcsin(r / (2 * big_r))
            z = vz[t] + cot_theta[t] * 2 * big_r * half_turn
            if abs(z) > half_length:
                break
            phi = phi0[t] - charge[t] * half_turn
            rows.append((pid[t], k, r * np.cos(phi), r * np.sin(phi), z))
    for _ in range(n_noise):
        k = int(rng.integers(len(radii)))
        phi = rng.uniform(-np.pi, np.pi)
        z = rng.uniform(-half_length, half_length)
        rows.append((0, k, radii[k] * np.cos(phi), radii[k] * np.sin(phi), z))

    n_hits = len(rows)
    arr = np.array([r[2:] for r in rows], dtype=np.float64).reshape(n_hits, 3)
    arr += rng.normal(0.0, smear, arr.shape)
    layer_idx = np.array([r[1] for r in rows], dtype=np.int64)
    hit_pid = np.array([r[0] for r in rows], dtype=np.int64)
    phi_hit = np.arctan2(arr[:, 1], arr[:, 0])
    hit_id = np.arange(1, n_hits + 1, dtype=np.int64)
    hits = pd.DataFrame({
        "hit_id": hit_id,
        "x": arr[:, 0], "y": arr[:, 1], "z": arr[:, 2],
        "volume_id": np.array([labels[k][0] for k in layer_idx], dtype=np.int64),
        "layer_id": np.array([labels[k][1] for k in layer_idx], dtype=np.int64),
        "module_id": (((phi_hit + np.pi) / (2 * np.pi) * 64).astype(np.int64) % 64 + 1),
    })
    truth = pd.DataFrame({"hit_id": hit_id[hit_pid != 0], "particle_id": hit_pid[hit_pid != 0]})
    counts = pd.Series(hit_pid[hit_pid != 0]).value_counts()
    particles["nhits"] = particles["particle_id"].map(counts).fillna(0).astype(np.int64)
    return Event(hits=hits, particles=particles, truth=truth.reset_index(drop=True), event_id=event_id)
