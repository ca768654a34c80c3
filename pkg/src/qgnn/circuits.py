"""Angle-encoding circuits and the PQC families used inside the hybrid layers.

A QNN template is ``encoding rotations -> PQC -> <Z> readout``. Every family
has a fixed gate layout so parameter counts are pure functions of
``(family, n_qubits, n_layers)``:

============  ==========================================  ===============
family        layout                                      parameters
============  ==========================================  ===============
circuit10     RY layer, then L x (CZ ring, RY layer)      n (L + 1)
circuit19     L x (RX layer, RZ layer, CRX ring)          3 n L
mps           ladder of (RY, RY, CZ) blocks + RY readout  2 (n - 1) + 1
ttn           binary tree of (RY, RY, CZ) + RY readout    2 (n - 1) + 1
identity      no gates                                    0
============  ==========================================  ===============

The CZ ring closes only for ``n >= 3`` (two qubits get a single CZ); the
directed CRX ring always has ``n`` gates, so two qubits get CRX(0, 1) and
CRX(1, 0). The TTN
pairs surviving qubits level by level and keeps the lower index of each pair;
with a non-power-of-two count the unpaired qubit moves up unchanged, so every
tree has ``n - 1`` blocks. MPS and TTN finish with an RY on the measured qubit:
a CZ commutes with the Z readout, so without it the final block would be
invisible to the measurement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statevector import (
    CircuitTemplate,
    GateOp,
    Input,
    Trainable,
    expectations_batch,
    run_batch,
)

FAMILIES = ("circuit10", "circuit19", "mps", "ttn", "identity")
LAYERED = ("circuit10", "circuit19", "identity")
HIERARCHICAL = ("mps", "ttn")

_ALIASES = {
    "circuit10": "circuit10", "circuit_10": "circuit10", "c10": "circuit10", "10": "circuit10",
    "circuit19": "circuit19", "circuit_19": "circuit19", "c19": "circuit19", "19": "circuit19",
    "mps": "mps", "ttn": "ttn", "identity": "identity", "none": "identity",
}


def canonical_family(name: str) -> str:
    key = str(name).strip().lower().replace(" ", "").replace("-", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown PQC family {name!r}; expected one of {FAMILIES}") from None


@dataclass(frozen=True)
class EncodingSpec:
    axis: str = "Y"
    scale: float = np.pi

    def __post_init__(self):
        axis = str(self.axis).upper()
        if axis not in ("X", "Y", "Z"):
            raise ValueError(f"encoding axis must be X, Y or Z, got {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        if not self.scale > 0:
            raise ValueError("encoding scale must be positive")


@dataclass(frozen=True)
class PqcSpec:
    family: str
    n_qubits: int
    n_layers: int = 1

    def __post_init__(self):
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        n = self.n_qubits
        if not 1 <= n <= 20:
            raise ValueError(f"n_qubits must be in [1, 20], got {n}")
        if fam in LAYERED and self.n_layers < 1:
            raise ValueError("layered families need n_layers >= 1")
        if fam in ("circuit10", "circuit19") and n < 2:
            raise ValueError(f"{fam} needs at least 2 qubits")
        if fam == "mps" and n < 2:
            raise ValueError("MPS needs at least 2 qubits")
        if fam == "ttn" and n < 2:
            raise ValueError("TTN needs at least 2 qubits")

    @property
    def measured_qubits(self) -> tuple[int, ...]:
        if self.family == "mps":
            return (self.n_qubits - 1,)
        if self.family == "ttn":
            return (0,)
        return tuple(range(self.n_qubits))

    @property
    def n_params(self) -> int:
        return pqc_param_count(self.family, self.n_qubits, self.n_layers)


@dataclass(frozen=True)
class QnnSpec:
    pqc: PqcSpec
    encoding: EncodingSpec = field(default_factory=EncodingSpec)


def pqc_param_count(family: str, n_qubits: int, n_layers: int = 1) -> int:
    family = canonical_family(family)
    n, layers = n_qubits, n_layers
    return {
        "circuit10": n * (layers + 1),
        "circuit19": 3 * n * layers,
        "mps": 2 * (n - 1) + 1,
        "ttn": 2 * (n - 1) + 1,
        "identity": 0,
    }[family]


def _ring(n: int, directed: bool = False) -> list[tuple[int, int]]:
    if n == 2 and not directed:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def _pqc_ops(spec: PqcSpec) -> list[GateOp]:
    n, fam = spec.n_qubits, spec.family
    ops: list[GateOp] = []
    counter = iter(range(spec.n_params))

    def rot(kind, q):
        ops.append(GateOp(kind, (q,), Trainable(next(counter))))

    if fam == "circuit10":
        for q in range(n):
            rot("RY", q)
        for _ in range(spec.n_layers):
            for a, b in _ring(n):
                ops.append(GateOp("CZ", (a, b)))
            for q in range(n):
                rot("RY", q)
    elif fam == "circuit19":
        for _ in range(spec.n_layers):
            for q in range(n):
                rot("RX", q)
            for q in range(n):
                rot("RZ", q)
            for c, t in _ring(n, directed=True):
                ops.append(GateOp("CRX", (c, t), Trainable(next(counter))))
    elif fam == "mps":
        for k in range(n - 1):
            rot("RY", k)
            rot("RY", k + 1)
            ops.append(GateOp("CZ", (k, k + 1)))
        rot("RY", n - 1)
    elif fam == "ttn":
        alive = list(range(n))
        while len(alive) > 1:
            for a, b in zip(alive[0::2], alive[1::2]):
                rot("RY", a)
                rot("RY", b)
                ops.append(GateOp("CZ", (a, b)))
            # an unpaired qubit is carried to the next level
            alive = alive[0::2]
        rot("RY", 0)
    return ops


def build_pqc(spec: PqcSpec) -> CircuitTemplate:
    """The bare PQC (no encoding, no inputs)."""
    return CircuitTemplate(
        n_qubits=spec.n_qubits,
        ops=tuple(_pqc_ops(spec)),
        n_params=spec.n_params,
        n_inputs=0,
        measured_qubits=spec.measured_qubits,
        name=f"{spec.family}-n{spec.n_qubits}-L{spec.n_layers}",
    )


def build_qnn(spec: QnnSpec) -> CircuitTemplate:
    """Encoding rotation per qubit (input-bound) followed by the PQC."""
    pqc = spec.pqc
    enc = [
        GateOp("R" + spec.encoding.axis, (q,), Input(q, spec.encoding.scale))
        for q in range(pqc.n_qubits)
    ]
    return CircuitTemplate(
        n_qubits=pqc.n_qubits,
        ops=tuple(enc + _pqc_ops(pqc)),
        n_params=pqc.n_params,
        n_inputs=pqc.n_qubits,
        measured_qubits=pqc.measured_qubits,
        name=f"{spec.encoding.axis.lower()}-{pqc.family}-n{pqc.n_qubits}-L{pqc.n_layers}",
    )


def check_unit_interval(inputs: np.ndarray) -> None:
    if not np.all(np.isfinite(inputs)) or inputs.min(initial=0.0) < 0.0 or inputs.max(initial=0.0) > 1.0:
        raise ValueError("QNN inputs must lie in [0, 1]; upstream activation is broken")


def qnn_forward(template: CircuitTemplate, params, inputs) -> np.ndarray:
    """One <Z> per measured qubit; ``inputs`` may be ``(n,)`` or ``(B, n)``."""
    inputs = np.asarray(inputs, dtype=np.float64)
    check_unit_interval(inputs)
    amps = run_batch(template, params, inputs)
    out = expectations_batch(template, amps)
    return out[0] if inputs.ndim == 1 else out
