"""Dense statevector simulation with analytic expectations and adjoint gradients.

Conventions:

* qubit 0 is the least significant bit of the basis-state index;
* rotations are ``R_A(theta) = exp(-i theta A / 2)``;
* ``CRX(theta)`` applies ``RX(theta)`` to the target when the control is 1.

All circuit evaluation is batched: a batch of ``B`` parameter/input rows is
simulated at once as a ``(B, 2**n)`` complex128 array. The single-state
helpers (:func:`run`, :func:`adjoint_gradients`) are thin wrappers around the
batched kernels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

MAX_QUBITS = 20

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ("RX", "RY", "RZ", "CZ", "CRX")


@dataclass(frozen=True)
class Constant:
    angle: float


@dataclass(frozen=True)
class Trainable:
    index: int


@dataclass(frozen=True)
class Input:
    index: int
    scale: float = np.pi


Binding = Union[Constant, Trainable, Input]


@dataclass(frozen=True)
class GateOp:
    kind: str
    qubits: tuple[int, ...]
    binding: Binding | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        arity = 1 if self.kind in ROTATIONS else 2
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity or min(self.qubits) < 0:
            raise ValueError(f"invalid qubit indices {self.qubits}")
        if self.kind == "CZ" and self.binding is not None:
            raise ValueError("CZ takes no angle binding")
        if self.kind != "CZ" and self.binding is None:
            raise ValueError(f"{self.kind} requires an angle binding")

    @property
    def parameterized(self) -> bool:
        return self.kind != "CZ"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "qubits": list(self.qubits)}
        b = self.binding
        if isinstance(b, Constant):
            out["binding"] = {"type": "constant", "angle": b.angle}
        elif isinstance(b, Trainable):
            out["binding"] = {"type": "trainable", "index": b.index}
        elif isinstance(b, Input):
            out["binding"] = {"type": "input", "index": b.index, "scale": b.scale}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GateOp":
        b = d.get("binding")
        binding = None
        if b is not None:
            kind = b["type"]
            if kind == "constant":
                binding = Constant(float(b["angle"]))
            elif kind == "trainable":
                binding = Trainable(int(b["index"]))
            elif kind == "input":
                binding = Input(int(b["index"]), float(b["scale"]))
            else:
                raise ValueError(f"unknown binding type {kind!r}")
        return cls(d["kind"], tuple(d["qubits"]), binding)


@dataclass(frozen=True)
class CircuitTemplate:
    """An ordered gate list with parameter and input bindings."""

    n_qubits: int
    ops: tuple[GateOp, ...]
    n_params: int
    n_inputs: int
    measured_qubits: tuple[int, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "measured_qubits", tuple(int(q) for q in self.measured_qubits))
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        seen_params: set[int] = set()
        input_counts = [0] * self.n_inputs
        for op in self.ops:
            if max(op.qubits) >= self.n_qubits:
                raise ValueError(f"{op.kind} on qubits {op.qubits} exceeds register of {self.n_qubits}")
            b = op.binding
            if isinstance(b, Trainable):
                if not 0 <= b.index < self.n_params:
                    raise ValueError(f"trainable index {b.index} out of range")
                seen_params.add(b.index)
            elif isinstance(b, Input):
                if not 0 <= b.index < self.n_inputs:
                    raise ValueError(f"input index {b.index} out of range")
                input_counts[b.index] += 1
        if len(seen_params) != self.n_params:
            raise ValueError("every trainable parameter must be bound at least once")
        if any(c != 1 for c in input_counts):
            raise ValueError("every input feature must be bound exactly once")
        mq = self.measured_qubits
        if not mq or len(set(mq)) != len(mq) or min(mq) < 0 or max(mq) >= self.n_qubits:
            raise ValueError(f"invalid measured qubits {mq}")

    @property
    def n_outputs(self) -> int:
        return len(self.measured_qubits)

    def count_trainable_bindings(self) -> int:
        return len({op.binding.index for op in self.ops if isinstance(op.binding, Trainable)})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_qubits": self.n_qubits,
            "n_params": self.n_params,
            "n_inputs": self.n_inputs,
            "measured_qubits": list(self.measured_qubits),
            "ops": [op.to_dict() for op in self.ops],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitTemplate":
        return cls(
            n_qubits=int(d["n_qubits"]),
            ops=tuple(GateOp.from_dict(o) for o in d["ops"]),
            n_params=int(d["n_params"]),
            n_inputs=int(d["n_inputs"]),
            measured_qubits=tuple(d["measured_qubits"]),
            name=d.get("name", ""),
        )


class Statevector:
    """Amplitudes of an n-qubit register (qubit 0 = least significant bit)."""

    def __init__(self, amplitudes):
        amps = np.asarray(amplitudes, dtype=np.complex128)
        if amps.ndim != 1:
            raise ValueError("amplitudes must be one-dimensional")
        n = int(amps.size).bit_length() - 1
        if amps.size != 1 << n or n < 1:
            raise ValueError(f"amplitude count {amps.size} is not 2**n for n >= 1")
        if n > MAX_QUBITS:
            raise ValueError(f"{n} qubits exceeds the cap of {MAX_QUBITS}")
        self.amplitudes = amps
        self.n_qubits = n

    @classmethod
    def zero(cls, n_qubits: int) -> "Statevector":
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "Statevector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def copy(self) -> "Statevector":
        return Statevector(self.amplitudes.copy())

    def __repr__(self):
        return f"Statevector(n_qubits={self.n_qubits})"


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _slot(tensor: np.ndarray, n: int, bits: dict[int, int]) -> np.ndarray:
    """Basic-slicing view of a ``(L, 2, ..., 2)`` tensor with some qubits fixed."""
    index = [slice(None)] * (n + 1)
    for q, bit in bits.items():
        index[n - q] = bit
    return tensor[tuple(index)]


@lru_cache(maxsize=None)
def z_signs(n: int, qubits: tuple[int, ...]) -> np.ndarray:
    """``(len(qubits), 2**n)`` table of the Z eigenvalue of each basis state."""
    idx = np.arange(1 << n)
    return np.stack([1.0 - 2.0 * ((idx >> q) & 1) for q in qubits]) if qubits else np.zeros((0, 1 << n))


def _rotation_entries(kind: str, theta: np.ndarray, extra_dims: int):
    """Entries (m00, m01, m10, m11) of R_kind(theta), broadcastable over a row."""
    half = np.asarray(theta, dtype=np.float64).reshape((-1,) + (1,) * extra_dims) / 2.0
    if kind == "RZ":
        phase = np.exp(-1j * half)
        return phase, None, None, phase.conj()
    c, s = np.cos(half), np.sin(half)
    if kind == "RX":
        return c, -1j * s, -1j * s, c
    return c, -s, s, c


def apply_op_inplace(amps: np.ndarray, n: int, op: GateOp, theta) -> None:
    """Apply ``op`` to every row of ``amps`` (shape ``(L, 2**n)``) in place.

    ``theta`` is an array of length ``L`` or 1 (ignored for CZ).
    """
    tensor = amps.reshape((amps.shape[0],) + (2,) * n)
    if op.kind == "CZ":
        a, b = op.qubits
        _slot(tensor, n, {a: 1, b: 1})[...] *= -1.0
        return
    if op.kind == "CRX":
        control, target = op.qubits
        kind, fixed = "RX", {control: 1}
    else:
        target = op.qubits[0]
        kind, fixed = op.kind, {}
    a0 = _slot(tensor, n, {**fixed, target: 0})
    a1 = _slot(tensor, n, {**fixed, target: 1})
    m00, m01, m10, m11 = _rotation_entries(kind, theta, a0.ndim - 1)
    if m01 is None:
        a0 *= m00
        a1 *= m11
        return
    new0 = m00 * a0 + m01 * a1
    a1[...] = m10 * a0 + m11 * a1
    a0[...] = new0


def _apply_generator(amps: np.ndarray, n: int, op: GateOp) -> np.ndarray:
    """Return ``G @ amps`` per row, with ``U = exp(-i theta G / 2)``."""
    shape = (amps.shape[0],) + (2,) * n
    src = amps.reshape(shape)
    out = np.zeros(shape, dtype=amps.dtype)
    if op.kind == "CRX":
        control, target = op.qubits
        fixed = {control: 1}
    else:
        target = op.qubits[0]
        fixed = {}
    s0 = _slot(src, n, {**fixed, target: 0})
    s1 = _slot(src, n, {**fixed, target: 1})
    o0 = _slot(out, n, {**fixed, target: 0})
    o1 = _slot(out, n, {**fixed, target: 1})
    if op.kind in ("RX", "CRX"):
        o0[...] = s1
        o1[...] = s0
    elif op.kind == "RY":
        o0[...] = -1j * s1
        o1[...] = 1j * s0
    else:
        o0[...] = s0
        o1[...] = -s1
    return out.reshape(amps.shape)


def _as_batch(template: CircuitTemplate, params, inputs):
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if params.ndim == 1:
        params = params[None, :]
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if params.shape[-1] != template.n_params:
        raise ValueError(f"expected {template.n_params} parameters, got {params.shape[-1]}")
    if inputs.shape[-1] != template.n_inputs:
        raise ValueError(f"expected {template.n_inputs} inputs, got {inputs.shape[-1]}")
    batch = max(params.shape[0], inputs.shape[0])
    if params.shape[0] not in (1, batch) or inputs.shape[0] not in (1, batch):
        raise ValueError("parameter and input batch sizes disagree")
    return params, inputs, batch


def _op_angle(op: GateOp, params: np.ndarray, inputs: np.ndarray):
    b = op.binding
    if isinstance(b, Trainable):
        return params[:, b.index]
    if isinstance(b, Input):
        return b.scale * inputs[:, b.index]
    if isinstance(b, Constant):
        return np.array([b.angle])
    return None


def run_batch(template: CircuitTemplate, params, inputs) -> np.ndarray:
    """Simulate a batch of rows; returns amplitudes of shape ``(B, 2**n)``.

    ``params`` may be ``(P,)`` (shared) or ``(B, P)``; likewise ``inputs``.
    """
    params, inputs, batch = _as_batch(template, params, inputs)
    n = template.n_qubits
    amps = np.zeros((batch, 1 << n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for op in template.ops:
        apply_op_inplace(amps, n, op, _op_angle(op, params, inputs))
    return amps


def expectations_batch(template: CircuitTemplate, amps: np.ndarray) -> np.ndarray:
    """<Z> of each measured qubit, shape ``(B, n_measured)``."""
    probs = amps.real ** 2 + amps.imag ** 2
    return probs @ z_signs(template.n_qubits, template.measured_qubits).T


def adjoint_reverse(template: CircuitTemplate, params, inputs, final: np.ndarray, weights: np.ndarray):
    """Reverse sweep for weighted sums of measured <Z> observables.

    ``weights`` has shape ``(B, K, M)``; row ``b`` carries ``K`` observables
    ``O_bk = sum_m weights[b, k, m] Z_{measured[m]}``. Returns
    ``(d_params, d_inputs)`` with shapes ``(B, K, P)`` and ``(B, K, I)``:
    derivatives of ``<O_bk>`` for each batch row.
    """
    params, inputs, batch = _as_batch(template, params, inputs)
    n = template.n_qubits
    dim = 1 << n
    k = weights.shape[1]
    signs = z_signs(n, template.measured_qubits)
    phi = final.copy()
    lam = (final[:, None, :] * (weights @ signs)).reshape(batch * k, dim)
    d_params = np.zeros((batch, k, template.n_params))
    d_inputs = np.zeros((batch, k, template.n_inputs))
    for op in reversed(template.ops):
        theta = _op_angle(op, params, inputs)
        b = op.binding
        if isinstance(b, (Trainable, Input)):
            g_phi = _apply_generator(phi, n, op)
            inner = np.einsum("bkd,bd->bk", lam.reshape(batch, k, dim).conj(), g_phi).imag
            if isinstance(b, Trainable):
                d_params[:, :, b.index] += inner
            else:
                d_inputs[:, :, b.index] += b.scale * inner
        if op.kind == "CZ":
            apply_op_inplace(phi, n, op, None)
            apply_op_inplace(lam, n, op, None)
        else:
            apply_op_inplace(phi, n, op, -theta)
            apply_op_inplace(lam, n, op, -np.repeat(theta, k) if theta.size > 1 else -theta)
    return d_params, d_inputs


def adjoint_jacobian_batch(template: CircuitTemplate, params, inputs):
    """Expectations ``(B, M)`` and Jacobians ``(B, M, P)``, ``(B, M, I)``."""
    amps = run_batch(template, params, inputs)
    m = template.n_outputs
    weights = np.broadcast_to(np.eye(m), (amps.shape[0], m, m))
    d_params, d_inputs = adjoint_reverse(template, params, inputs, amps, weights)
    return expectations_batch(template, amps), d_params, d_inputs


def adjoint_vjp_batch(template: CircuitTemplate, params, inputs, upstream, final=None):
    """Vector-Jacobian product for a batch sharing one parameter vector.

    ``upstream`` is ``(B, M)``: the loss gradient w.r.t. each expectation.
    Returns the parameter gradient summed over the batch ``(P,)`` and the
    per-row input gradient ``(B, I)``.
    """
    if final is None:
        final = run_batch(template, params, inputs)
    weights = np.asarray(upstream, dtype=np.float64)[:, None, :]
    d_params, d_inputs = adjoint_reverse(template, params, inputs, final, weights)
    return d_params[:, 0, :].sum(axis=0), d_inputs[:, 0, :]


# ---------------------------------------------------------------------------
# single-state API
# ---------------------------------------------------------------------------

def apply_gate(state: Statevector, gate: GateOp, angle: float | None = None) -> Statevector:
    if max(gate.qubits) >= state.n_qubits:
        raise ValueError(f"gate on {gate.qubits} does not fit {state.n_qubits} qubits")
    if gate.parameterized and angle is None:
        raise ValueError(f"{gate.kind} needs an angle")
    if not gate.parameterized and angle is not None:
        raise ValueError("CZ takes no angle")
    amps = state.amplitudes.copy()[None, :]
    apply_op_inplace(amps, state.n_qubits, gate, None if angle is None else np.array([float(angle)]))
    return Statevector(amps[0])


def run(template: CircuitTemplate, params=(), inputs=()) -> Statevector:
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    return Statevector(run_batch(template, params, inputs)[0])


def expectation_z(state: Statevector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise ValueError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    probs = np.abs(state.amplitudes) ** 2
    return float(probs @ z_signs(state.n_qubits, (qubit,))[0])


def fidelity(a: Statevector, b: Statevector) -> float:
    if a.n_qubits != b.n_qubits:
        raise ValueError("fidelity of states with different qubit counts")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def adjoint_gradients(template: CircuitTemplate, params=(), inputs=()):
    """``(expectations (M,), d/dparams (M, P), d/dinputs (M, I))`` for one row."""
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    exps, dp, di = adjoint_jacobian_batch(template, params, inputs)
    return exps[0], dp[0], di[0]
