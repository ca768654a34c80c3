import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bound_gates, central_difference, dense_run, exhaustive_z
from qgnn.circuits import PqcSpec, QnnSpec, EncodingSpec, build_pqc, build_qnn
from qgnn.statevector import (
    CircuitTemplate,
    Constant,
    GateOp,
    Input,
    Statevector,
    Trainable,
    adjoint_gradients,
    adjoint_vjp_batch,
    apply_gate,
    expectation_z,
    fidelity,
    run,
    run_batch,
)


def one_qubit(kind="RY", binding=None, n_params=1, n_inputs=0):
    binding = binding or Trainable(0)
    return CircuitTemplate(1, (GateOp(kind, (0,), binding),), n_params, n_inputs, (0,))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def test_statevector_length_must_be_power_of_two():
    with pytest.raises(ValueError):
        Statevector(np.ones(3) / np.sqrt(3))


def test_gateop_binding_rules():
    with pytest.raises(ValueError):
        GateOp("CZ", (0, 1), Constant(0.1))
    with pytest.raises(ValueError):
        GateOp("RX", (0,))
    with pytest.raises(ValueError):
        GateOp("CRX", (1, 1), Trainable(0))
    with pytest.raises(ValueError):
        GateOp("H", (0,))


def test_template_binding_invariants():
    with pytest.raises(ValueError):  # trainable 1 never bound
        CircuitTemplate(1, (GateOp("RY", (0,), Trainable(0)),), 2, 0, (0,))
    with pytest.raises(ValueError):  # input bound twice
        CircuitTemplate(1, (GateOp("RY", (0,), Input(0)), GateOp("RX", (0,), Input(0))), 0, 1, (0,))
    with pytest.raises(ValueError):
        CircuitTemplate(2, (), 0, 0, ())
    with pytest.raises(ValueError):
        CircuitTemplate(2, (GateOp("CZ", (0, 2)),), 0, 0, (0,))
    with pytest.raises(ValueError):
        CircuitTemplate(21, (), 0, 0, (0,))


def test_template_dict_round_trip():
    tpl = build_qnn(QnnSpec(PqcSpec("circuit19", 3, 2), EncodingSpec("X")))
    again = CircuitTemplate.from_dict(tpl.to_dict())
    assert again == tpl


# ---------------------------------------------------------------------------
# apply_gate
# ---------------------------------------------------------------------------

def test_ry_pi_flips_zero():
    out = apply_gate(Statevector.zero(1), GateOp("RY", (0,), Trainable(0)), np.pi)
    np.testing.assert_allclose(np.abs(out.amplitudes), [0.0, 1.0], atol=1e-15)
    assert expectation_z(out, 0) == pytest.approx(-1.0, abs=1e-15)


def test_cz_negates_11_only():
    amps = np.full(4, 0.5, dtype=complex)
    out = apply_gate(Statevector(amps), GateOp("CZ", (0, 1)))
    np.testing.assert_array_equal(out.amplitudes, [0.5, 0.5, 0.5, -0.5])


@pytest.mark.parametrize("theta", [0.0, 0.7, np.pi, 5.1])
def test_crx_control_zero_is_identity(theta):
    # control qubit 1 is |0>, target qubit 0 in a superposition
    psi = apply_gate(Statevector.zero(2), GateOp("RY", (0,), Trainable(0)), 1.1)
    out = apply_gate(psi, GateOp("CRX", (1, 0), Trainable(0)), theta)
    np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)


def test_apply_gate_errors():
    with pytest.raises(ValueError):
        apply_gate(Statevector.zero(1), GateOp("CZ", (0, 1)))
    with pytest.raises(ValueError):
        apply_gate(Statevector.zero(1), GateOp("RX", (0,), Trainable(0)))
    with pytest.raises(ValueError):
        apply_gate(Statevector.zero(2), GateOp("CZ", (0, 1)), 0.3)


# ---------------------------------------------------------------------------
# run / expectation / fidelity
# ---------------------------------------------------------------------------

def test_empty_circuit_is_exact_zero_state():
    out = run(CircuitTemplate(3, (), 0, 0, (0,)))
    expected = np.zeros(8, dtype=complex)
    expected[0] = 1.0
    np.testing.assert_array_equal(out.amplitudes, expected)


def test_input_binding_closed_form():
    tpl = one_qubit(binding=Input(0, np.pi), n_params=0, n_inputs=1)
    out = run(tpl, [], [0.5])
    np.testing.assert_allclose(out.amplitudes, [np.cos(np.pi / 4), np.sin(np.pi / 4)], atol=1e-15)
    assert abs(expectation_z(out, 0)) < 1e-12


def test_run_length_mismatch():
    tpl = one_qubit()
    with pytest.raises(ValueError):
        run(tpl, [0.1, 0.2])
    with pytest.raises(ValueError):
        run(tpl, [0.1], [0.3])


@pytest.mark.parametrize("family,n,layers", [
    ("circuit10", 4, 1), ("circuit10", 3, 2), ("circuit19", 4, 1), ("circuit19", 2, 2),
    ("mps", 4, 1), ("ttn", 4, 1), ("ttn", 3, 1),
])
def test_run_matches_dense_unitary_product(family, n, layers):
    tpl = build_qnn(QnnSpec(PqcSpec(family, n, layers)))
    rng = np.random.default_rng(3)
    params = rng.uniform(0, 2 * np.pi, tpl.n_params)
    inputs = rng.uniform(0, 1, tpl.n_inputs)
    expected = dense_run(bound_gates(tpl, params, inputs), n)
    np.testing.assert_allclose(run(tpl, params, inputs).amplitudes, expected, rtol=0, atol=1e-10)


def test_circuit10_zero_params_matches_oracle():
    tpl = build_pqc(PqcSpec("circuit10", 4, 1))
    expected = dense_run(bound_gates(tpl, np.zeros(tpl.n_params), []), 4)
    np.testing.assert_allclose(run(tpl, np.zeros(tpl.n_params)).amplitudes, expected, atol=1e-10)


def test_expectation_exhaustive_sum():
    rng = np.random.default_rng(11)
    amps = rng.normal(size=8) + 1j * rng.normal(size=8)
    state = Statevector(amps / np.linalg.norm(amps))
    for q in range(3):
        assert expectation_z(state, q) == pytest.approx(exhaustive_z(state.amplitudes, q), abs=1e-14)
    with pytest.raises(ValueError):
        expectation_z(state, 3)


def test_basis_state_expectations_exact():
    for idx in range(8):
        state = Statevector.basis(3, idx)
        for q in range(3):
            assert expectation_z(state, q) == (-1.0 if (idx >> q) & 1 else 1.0)


def test_fidelity_examples():
    zero, one = Statevector.zero(1), Statevector.basis(1, 1)
    half = apply_gate(zero, GateOp("RY", (0,), Trainable(0)), np.pi / 2)
    assert fidelity(half, half) == pytest.approx(1.0, abs=1e-15)
    assert fidelity(zero, one) == 0.0
    assert fidelity(zero, half) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        fidelity(zero, Statevector.zero(2))


gate_strategy = st.tuples(
    st.sampled_from(["RX", "RY", "RZ", "CZ", "CRX"]),
    st.integers(0, 5),
    st.integers(0, 5),
    st.floats(-10, 10, allow_nan=False),
)


@settings(max_examples=1000, deadline=None)
@given(n=st.integers(1, 6), gates=st.lists(gate_strategy, max_size=25))
def test_norm_preserved(n, gates):
    state = Statevector.zero(n)
    for kind, a, b, theta in gates:
        a %= n
        if kind in ("CZ", "CRX"):
            if n < 2:
                continue
            b = (a + 1 + b % (n - 1)) % n
            state = apply_gate(state, GateOp(kind, (a, b), None if kind == "CZ" else Trainable(0)),
                               None if kind == "CZ" else theta)
        else:
            state = apply_gate(state, GateOp(kind, (a,), Trainable(0)), theta)
    assert abs(state.norm_squared() - 1.0) < 1e-10


# ---------------------------------------------------------------------------
# adjoint gradients
# ---------------------------------------------------------------------------

def test_single_ry_derivative():
    exps, dp, di = adjoint_gradients(one_qubit(), [0.3])
    assert exps[0] == pytest.approx(np.cos(0.3), abs=1e-14)
    assert dp[0, 0] == pytest.approx(-np.sin(0.3), abs=1e-10)
    assert di.shape == (1, 0)


def test_no_trainables_still_gives_input_gradients():
    tpl = build_qnn(QnnSpec(PqcSpec("identity", 2, 1)))
    exps, dp, di = adjoint_gradients(tpl, [], [0.2, 0.7])
    assert dp.shape == (2, 0)
    # <Z_q> = cos(pi x_q): diagonal input Jacobian
    np.testing.assert_allclose(di, np.diag(-np.pi * np.sin(np.pi * np.array([0.2, 0.7]))), atol=1e-12)


def _relative(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return np.where(np.maximum(np.abs(a), np.abs(b)) < 1e-9, 0.0, np.abs(a - b) / denom)


@pytest.mark.parametrize("family,n,layers,axis", [
    ("circuit10", 4, 2, "Y"), ("circuit19", 4, 2, "X"), ("circuit19", 3, 1, "Z"),
    ("mps", 4, 1, "Y"), ("ttn", 4, 1, "X"), ("ttn", 3, 1, "Y"), ("circuit10", 2, 1, "X"),
])
def test_adjoint_matches_finite_differences(family, n, layers, axis):
    tpl = build_qnn(QnnSpec(PqcSpec(family, n, layers), EncodingSpec(axis)))
    rng = np.random.default_rng(5)
    params = rng.uniform(0, 2 * np.pi, tpl.n_params)
    inputs = rng.uniform(0.1, 0.9, tpl.n_inputs)
    exps, dp, di = adjoint_gradients(tpl, params, inputs)

    def out_p(p):
        return np.array([expectation_z(run(tpl, p, inputs), q) for q in tpl.measured_qubits])

    def out_x(x):
        return np.array([expectation_z(run(tpl, params, x), q) for q in tpl.measured_qubits])

    fd_p = central_difference(out_p, params).T
    fd_x = central_difference(out_x, inputs).T
    assert _relative(dp, fd_p).max() < 1e-6
    assert _relative(di, fd_x).max() < 1e-6


def test_vjp_is_weighted_jacobian():
    tpl = build_qnn(QnnSpec(PqcSpec("circuit19", 3, 1)))
    rng = np.random.default_rng(2)
    params = rng.uniform(0, 2 * np.pi, tpl.n_params)
    inputs = rng.uniform(0, 1, (5, tpl.n_inputs))
    upstream = rng.normal(size=(5, tpl.n_outputs))
    d_params, d_inputs = adjoint_vjp_batch(tpl, params, inputs, upstream)
    want_p = np.zeros(tpl.n_params)
    for b in range(5):
        _, dp, di = adjoint_gradients(tpl, params, inputs[b])
        want_p += upstream[b] @ dp
        np.testing.assert_allclose(d_inputs[b], upstream[b] @ di, atol=1e-12)
    np.testing.assert_allclose(d_params, want_p, atol=1e-12)


def test_batched_run_rows_independent():
    tpl = build_qnn(QnnSpec(PqcSpec("circuit10", 3, 1)))
    rng = np.random.default_rng(0)
    params = rng.uniform(0, 2 * np.pi, tpl.n_params)
    inputs = rng.uniform(0, 1, (4, 3))
    batch = run_batch(tpl, params, inputs)
    for b in range(4):
        np.testing.assert_allclose(batch[b], run(tpl, params, inputs[b]).amplitudes, atol=1e-14)
