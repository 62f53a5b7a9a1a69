import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nodesim.cavity import CavityParams
from nodesim.core import DensityMatrix, QuantumError, bell_state, concurrence, rz
from nodesim.engine import NoiseModel
from nodesim.hyperfine import frame_unitary
from nodesim.protocols import (
    BASES,
    CARDINALS,
    TimeBinQubit,
    basis_probabilities,
    bell_protocol,
    carve_reflect,
    correct_readout,
    distribution_range,
    heralded_storage,
    herald_branches,
    linear_inversion,
    pauli_expectations,
    storage_average_fidelity,
    teleport_photon,
)

from .conftest import random_density

REFERENCE_CAVITY = CavityParams.from_ghz(5.6, 33.0, 0.1, delta=0.25 * 33.0)


@st.composite
def time_bin_qubits(draw):
    theta = draw(st.floats(0, math.pi))
    phi = draw(st.floats(0, 2 * math.pi))
    return TimeBinQubit(math.cos(theta / 2), math.sin(theta / 2) * complex(math.cos(phi), math.sin(phi)))


def test_cardinals():
    for name in CARDINALS:
        q = TimeBinQubit.cardinal(name)
        assert np.linalg.norm(q.vector()) == pytest.approx(1)
    with pytest.raises(ValueError):
        TimeBinQubit.cardinal("x")
    with pytest.raises(ValueError):
        TimeBinQubit(1, 1)


@given(time_bin_qubits(), st.floats(0, 2 * math.pi), st.booleans())
def test_herald_branches_sum_to_one(q, drift, real_cavity):
    br = herald_branches(q, REFERENCE_CAVITY if real_cavity else None, drift)
    assert sum(p for p, _ in br.values()) == pytest.approx(1, abs=1e-12)


@given(time_bin_qubits())
def test_ideal_teleport_is_perfect(q):
    for det in ("+", "-"):
        rec = teleport_photon(q, detector=det)
        assert rec.fidelity == pytest.approx(1, abs=1e-9)
        assert rec.success_probability == pytest.approx(0.25)
        assert rec.applied_frame_correction == ("Z" if det == "-" else "I")


def test_carving_passivity():
    v = np.kron(TimeBinQubit.cardinal("+").vector(), np.array([1, 1]) / math.sqrt(2))
    _, p = carve_reflect(v, 0.9, 0.1)
    assert 0 < p <= 1
    rho = DensityMatrix.from_ket([3, 2], v)
    m, p2 = carve_reflect(rho, 0.9, 0.1)
    assert p2 == pytest.approx(p)
    with pytest.raises(ValueError):
        carve_reflect(v, 1.5, 0)
    with pytest.raises(QuantumError):
        carve_reflect(np.ones(4), 1, 0)


def test_teleport_with_cavity_is_seeded():
    q = TimeBinQubit.cardinal("+i")
    a = teleport_photon(q, REFERENCE_CAVITY, seed=5)
    b = teleport_photon(q, REFERENCE_CAVITY, seed=5)
    assert a.detector == b.detector and a.fidelity == b.fidelity
    assert 0.5 < a.fidelity < 1
    assert teleport_photon(TimeBinQubit.cardinal("+"), REFERENCE_CAVITY, detector="+").fidelity == pytest.approx(1)


def test_herald_error_mixes():
    rec = teleport_photon(TimeBinQubit.cardinal("e"), detector="+", herald_error=1.0)
    assert rec.fidelity == pytest.approx(0.5)
    with pytest.raises(ValueError):
        teleport_photon(TimeBinQubit.cardinal("e"), herald_error=2)


def test_storage():
    q = TimeBinQubit.cardinal("+")
    _, f = heralded_storage(q, 20e-6, None)
    assert f == pytest.approx(1, abs=1e-12)
    nz = NoiseModel().dephasing_only()
    f_noisy = storage_average_fidelity(20e-6, nz)
    assert 0.87 <= f_noisy < 1
    _, f_ro = heralded_storage(q, 20e-6, NoiseModel(), with_readout=True)
    assert f_ro < heralded_storage(q, 20e-6, NoiseModel())[1]


@given(st.integers(0, 2**32 - 1), st.floats(0.6, 1), st.floats(0.6, 1), st.floats(0, 0.3), st.floats(0, 0.3))
def test_correct_readout_inverts_confusion(seed, a, b, c, d):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4))
    c1 = np.array([[a, 1 - b], [1 - a, b]])
    c2 = np.array([[1 - c, d], [c, 1 - d]])
    raw = np.kron(c1, c2) @ p
    est, dist = correct_readout(raw, [c1, c2])
    assert np.allclose(est, p, atol=1e-9)
    assert dist == pytest.approx(np.abs(raw - p).sum(), abs=1e-9)


def test_correct_readout_rejects_singular():
    with pytest.raises(QuantumError):
        correct_readout([0.5, 0.5], [np.full((2, 2), 0.5)])


@given(st.integers(0, 2**32 - 1))
def test_tomography_roundtrip(seed):
    rho = DensityMatrix([2, 2], random_density(np.random.default_rng(seed), 4))
    tables = {a + b: basis_probabilities(rho, a, b) for a in BASES for b in BASES}
    assert np.allclose(linear_inversion(pauli_expectations(tables)), rho.matrix, atol=1e-10)


@given(st.floats(-7, 7), st.floats(-7, 7), st.floats(-7, 7))
def test_concurrence_invariant_under_frames(a, b, c):
    post, pre = frame_unitary({"electron_z": a, "nuclear_pre_z": b, "nuclear_post_z": c})
    psi = post @ pre @ bell_state("psi+")
    assert concurrence(DensityMatrix.from_ket([2, 2], psi)) == pytest.approx(1, abs=1e-9)


@pytest.mark.parametrize("nucleus,target", [("down", "psi+"), ("up", "phi+")])
def test_ideal_bell(nucleus, target):
    r = bell_protocol(None, cnot="ideal", nucleus=nucleus)
    assert r.target == target
    assert r.fidelity == pytest.approx(1, abs=1e-9)
    assert r.concurrence == pytest.approx(1, abs=1e-9)


def test_werner_bell():
    p = (4 * 0.59 - 1) / 3
    r = bell_protocol(None, cnot="ideal", werner_p=p)
    assert r.fidelity == pytest.approx(0.59, abs=1e-9)
    assert r.concurrence == pytest.approx(0.18, abs=1e-8)
    with pytest.raises(ValueError):
        bell_protocol(None, cnot="ideal", werner_p=1.5)
    with pytest.raises(ValueError):
        bell_protocol(None)


def test_synthesized_bell(ref_params, cnot_gate):
    r = bell_protocol(ref_params, cnot=cnot_gate)
    assert r.fidelity >= 0.98
    assert r.gate_infidelity == cnot_gate.infidelity
    bare = bell_protocol(ref_params, cnot=cnot_gate, frames=False)
    assert bare.concurrence == pytest.approx(r.concurrence, abs=1e-6)


def test_noisy_bell_with_shots(ref_params, cnot_gate):
    nz = NoiseModel()
    r = bell_protocol(ref_params, nz, seed=3, cnot=cnot_gate, shots=2000, bootstrap=50)
    assert 0.9 < r.fidelity <= 1.01
    assert r.fidelity_err > 0 and r.concurrence_err > 0
    again = bell_protocol(ref_params, nz, seed=3, cnot=cnot_gate, shots=2000, bootstrap=50)
    assert again.to_json() == r.to_json()
    raw = bell_protocol(ref_params, nz, seed=3, cnot=cnot_gate, correct=False)
    assert raw.fidelity < r.fidelity
    d = json.loads(r.to_json())
    assert {"protocol", "params_hash", "shots", "herald_rate", "fidelity", "fidelity_err", "corrected"} <= set(d)


def test_distribution_range():
    assert distribution_range(2.5e-3, 2e8) == 500000.0
    with pytest.raises(ValueError):
        distribution_range(-1)
    with pytest.raises(ValueError):
        distribution_range(1, 0)
