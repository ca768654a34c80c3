"""Expressibility and entangling-capability descriptors for PQCs.

Expressibility compares the distribution of pairwise state fidelities of a
PQC (parameters drawn uniformly from ``[0, 2pi)``) with the Haar law
``P(F) = (N - 1)(1 - F)^(N - 2)`` through a binned KL divergence. Entangling
capability is the mean Meyer-Wallach ``Q`` over sampled parameter vectors.

Sample ``i`` draws its parameters from ``default_rng([seed, i])`` so results
do not depend on chunking or worker order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuits import EncodingSpec, PqcSpec, QnnSpec, build_qnn
from .statevector import CircuitTemplate, Statevector, run_batch

_CHUNK = 1024


@dataclass(frozen=True)
class DescriptorConfig:
    n_samples: int = 5000
    n_bins: int = 75
    rng_seed: int = 0
    reference_input: float = 0.5

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


@dataclass
class DescriptorReport:
    expressibility_E: float
    expressibility_Eprime: float
    entanglement: float
    histogram: np.ndarray
    bin_edges: np.ndarray = field(repr=False)


def descriptor_template(circuit, cfg: DescriptorConfig) -> CircuitTemplate:
    """Resolve a PqcSpec to its QNN template; templates pass through."""
    if isinstance(circuit, CircuitTemplate):
        return circuit
    if isinstance(circuit, PqcSpec):
        return build_qnn(QnnSpec(circuit, EncodingSpec("Y")))
    raise TypeError(f"expected PqcSpec or CircuitTemplate, got {type(circuit).__name__}")


def _sample_params(n_params: int, seed: int, start: int, stop: int, per_sample: int) -> np.ndarray:
    out = np.empty((stop - start, per_sample * n_params))
    for row, i in enumerate(range(start, stop)):
        out[row] = np.random.default_rng([seed, i]).uniform(0.0, 2 * np.pi, per_sample * n_params)
    return out


def _sampled_states(template: CircuitTemplate, cfg: DescriptorConfig, per_sample: int):
    """Yield chunks of states, each ``(per_sample, chunk, 2**n)``."""
    p = template.n_params
    x = np.full(template.n_inputs, cfg.reference_input)
    for start in range(0, cfg.n_samples, _CHUNK):
        stop = min(start + _CHUNK, cfg.n_samples)
        if p == 0:
            amps = run_batch(template, np.zeros(0), x)
            yield np.broadcast_to(amps, (per_sample, stop - start, amps.shape[1]))
            continue
        draws = _sample_params(p, cfg.rng_seed, start, stop, per_sample)
        yield np.stack([run_batch(template, draws[:, j * p:(j + 1) * p], x) for j in range(per_sample)])


def pairwise_fidelities(circuit, cfg: DescriptorConfig) -> np.ndarray:
    template = descriptor_template(circuit, cfg)
    chunks = []
    for states in _sampled_states(template, cfg, per_sample=2):
        overlap = np.einsum("bd,bd->b", states[0].conj(), states[1])
        chunks.append(overlap.real ** 2 + overlap.imag ** 2)
    return np.concatenate(chunks)


def fidelity_histogram(fidelities: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # F = 1 exactly belongs to the last bin
    counts, _ = np.histogram(np.clip(fidelities, 0.0, 1.0), bins=edges)
    return counts / counts.sum(), edges


def sample_fidelity_distribution(circuit, cfg: DescriptorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram of sampled pair fidelities and its bin edges."""
    return fidelity_histogram(pairwise_fidelities(circuit, cfg), cfg.n_bins)


def haar_bin_masses(n_qubits: int, edges: np.ndarray) -> np.ndarray:
    """Integral of the Haar fidelity density over each bin."""
    dim = 2 ** n_qubits
    cdf_tail = (1.0 - edges) ** (dim - 1)
    return cdf_tail[:-1] - cdf_tail[1:]


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete KL(p || q) in nats; bins with p = 0 contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def eprime(e: float) -> float:
    if e <= 0.0:
        return math.inf
    return -math.log10(e)


def expressibility(circuit, cfg: DescriptorConfig) -> tuple[float, float]:
    template = descriptor_template(circuit, cfg)
    hist, edges = sample_fidelity_distribution(template, cfg)
    e = kl_divergence(hist, haar_bin_masses(template.n_qubits, edges))
    return e, eprime(e)


def single_qubit_purities(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Purity of every one-qubit reduced state; ``amps`` is ``(B, 2**n)``."""
    amps = np.atleast_2d(amps)
    batch = amps.shape[0]
    out = np.empty((batch, n_qubits))
    for k in range(n_qubits):
        view = amps.reshape(batch, -1, 2, 1 << k)
        a0, a1 = view[:, :, 0, :], view[:, :, 1, :]
        p0 = np.sum(np.abs(a0) ** 2, axis=(1, 2))
        p1 = np.sum(np.abs(a1) ** 2, axis=(1, 2))
        coh = np.sum(a0 * a1.conj(), axis=(1, 2))
        out[:, k] = p0 ** 2 + p1 ** 2 + 2 * np.abs(coh) ** 2
    return out


def meyer_wallach_batch(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    return 2.0 * (1.0 - single_qubit_purities(amps, n_qubits).mean(axis=1))


def meyer_wallach_q(state: Statevector) -> float:
    if state.n_qubits < 2:
        raise ValueError("Meyer-Wallach Q needs at least 2 qubits")
    return float(meyer_wallach_batch(state.amplitudes[None, :], state.n_qubits)[0])


def entanglement_capability(circuit, cfg: DescriptorConfig) -> float:
    template = descriptor_template(circuit, cfg)
    if template.n_qubits < 2:
        raise ValueError("entanglement capability needs at least 2 qubits")
    total = 0.0
    for states in _sampled_states(template, cfg, per_sample=1):
        total += meyer_wallach_batch(states[0], template.n_qubits).sum()
    return float(total / cfg.n_samples)


def haar_sample(n_qubits: int, rng: np.random.Generator) -> Statevector:
    if not 1 <= n_qubits <= 20:
        raise ValueError("n_qubits must be in [1, 20]")
    dim = 1 << n_qubits
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return Statevector(z / np.linalg.norm(z))


def haar_fidelities(n_qubits: int, n_samples: int, seed: int) -> np.ndarray:
    out = np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        a, b = haar_sample(n_qubits, rng), haar_sample(n_qubits, rng)
        out[i] = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return out


def describe(circuit, cfg: DescriptorConfig) -> DescriptorReport:
    template = descriptor_template(circuit, cfg)
    hist, edges = sample_fidelity_distribution(template, cfg)
    e = kl_divergence(hist, haar_bin_masses(template.n_qubits, edges))
    ent = entanglement_capability(template, cfg) if template.n_qubits >= 2 else 0.0
    return DescriptorReport(e, eprime(e), ent, hist, edges)
