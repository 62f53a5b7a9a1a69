import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from nodesim.core import TWO_PI, process_fidelity, rx
from nodesim.hyperfine import (
    CNOT_DOWN,
    HyperfineParams,
    SynthesisError,
    branch_unitaries,
    coherence_signal,
    conditional_angle,
    conditional_precession,
    decoupling_quaternions,
    eigenfrequency,
    extract_frequency,
    find_resonances_numeric,
    free_evolution,
    hamiltonian,
    mean_frequency,
    q_from_matrix,
    q_mul,
    q_pow,
    q_to_matrix,
    ramsey_signal,
    register_hamiltonian,
    resonance_time,
    solve_conditional_rotation,
    unconditional_rotation,
)

MHZ = TWO_PI * 1e6


@st.composite
def weak_params(draw, min_perp=0.0):
    wl = draw(st.floats(0.5, 5.0))
    return HyperfineParams.from_mhz(
        wl,
        draw(st.floats(-0.35, 0.35)) * wl,
        draw(st.sampled_from([1, -1])) * draw(st.floats(min_perp, 0.2)) * wl,
    )


@st.composite
def quaternions(draw):
    v = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0, 0, 0])
    return v / np.linalg.norm(v)


def test_params_validation():
    with pytest.raises(ValueError):
        HyperfineParams.from_mhz(-1, 0, 0)
    with pytest.raises(ValueError):
        HyperfineParams.from_mhz(1, 1.5, 0)
    p = HyperfineParams.from_mhz(2.0, 0.7, -0.35)
    assert p.to_mhz() == pytest.approx({"omega_l": 2.0, "A_par": 0.7, "A_perp": -0.35})


@given(weak_params(), st.sampled_from(["up", "down"]))
def test_eigen_splitting_formula(p, e):
    s = 1 if e == "up" else -1
    expected = math.sqrt((p.omega_l + s * p.A_par / 2) ** 2 + (p.A_perp / 2) ** 2)
    assert eigenfrequency(p, e) == pytest.approx(expected)
    ev = np.linalg.eigvalsh(hamiltonian(p, e))
    assert ev[1] - ev[0] == pytest.approx(expected)


def test_reference_values(ref_params):
    assert eigenfrequency(ref_params, "up") / MHZ == pytest.approx(2.35651, abs=1e-5)
    assert eigenfrequency(ref_params, "down") / MHZ == pytest.approx(1.65925, abs=1e-5)
    cp = conditional_precession(ref_params)
    assert math.degrees(cp.axis_angle_between) == pytest.approx(10.313, abs=1e-3)
    assert resonance_time(0, ref_params) == pytest.approx(124.5215e-9, rel=1e-5)
    with pytest.raises(ValueError):
        resonance_time(-1, ref_params)
    with pytest.raises(ValueError):
        resonance_time(0.5, ref_params)


@given(quaternions(), quaternions())
def test_quaternion_product_matches_matrices(p, q):
    assert np.allclose(q_to_matrix(q_mul(p, q)), q_to_matrix(p) @ q_to_matrix(q))
    assert np.allclose(q_from_matrix(q_to_matrix(p)), p)


@given(quaternions(), st.integers(0, 40))
def test_quaternion_power(q, n):
    assert np.allclose(q_to_matrix(q_pow(q, n)), np.linalg.matrix_power(q_to_matrix(q), n), atol=1e-9)


@given(weak_params(), st.floats(10e-9, 2e-6), st.integers(0, 20))
def test_branch_unitaries_are_su2(p, tau, half_n):
    for u in branch_unitaries(p, tau, 2 * half_n):
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-10)
        assert np.linalg.det(u) == pytest.approx(1, abs=1e-10)


@given(weak_params(), st.floats(10e-9, 2e-6))
def test_free_evolution_matches_expm(p, t):
    for e in ("up", "down"):
        assert np.allclose(free_evolution(p, e, t), expm(-1j * hamiltonian(p, e) * t), atol=1e-9)


def test_decoupling_matches_matrix_product(ref_params):
    tau, n = 131e-9, 6
    u = lambda e, t: free_evolution(ref_params, e, t)  # noqa: E731
    unit_up = u("up", tau) @ u("down", 2 * tau) @ u("up", tau)
    vu, vd = branch_unitaries(ref_params, tau, n)
    assert np.allclose(vu, np.linalg.matrix_power(unit_up, n // 2))
    with pytest.raises(ValueError):
        decoupling_quaternions(ref_params, tau, 3)


@given(st.floats(0.5, 5.0), st.floats(-0.35, 0.35), st.floats(10e-9, 2e-6), st.integers(1, 16))
def test_vanishing_perpendicular_coupling(wl, ratio, tau, half_n):
    p = HyperfineParams.from_mhz(wl, ratio * wl, 0.0)
    assert float(conditional_angle(p, tau, 2 * half_n)) == pytest.approx(0, abs=1e-6)
    assert float(coherence_signal(p, [tau], 2 * half_n)[0]) == pytest.approx(1, abs=1e-12)


def test_register_hamiltonian_blocks(ref_params):
    other = HyperfineParams.from_mhz(2.0, -0.3, 0.2)
    h = register_hamiltonian([ref_params, other])
    assert h.shape == (8, 8)
    t = 0.37e-6
    u = expm(-1j * h * t)
    up = np.kron(free_evolution(ref_params, "up", t), free_evolution(other, "up", t))
    assert np.allclose(u[:4, :4], up)
    assert np.allclose(u[:4, 4:], 0)


def test_coherence_dip_at_resonance(ref_params):
    tau0 = resonance_time(0, ref_params)
    assert coherence_signal(ref_params, [tau0], 16)[0] < 0.9
    assert coherence_signal(ref_params, [20e-9], 16)[0] > 0.99


def test_numeric_resonances(ref_params):
    dips = find_resonances_numeric(ref_params, (100e-9, 150e-9))
    # finite-N side lobes also dip below threshold; the resonance is the deepest
    d = min(dips, key=lambda x: x.depth)
    assert abs(d.tau / resonance_time(0, ref_params) - 1) < 5e-3
    assert d.depth < 0.9 and d.tau_min > d.tau
    assert float(d) == d.tau
    with pytest.raises(ValueError):
        find_resonances_numeric(ref_params, (100e-9, 150e-9), step=2e-9)
    with pytest.raises(ValueError):
        find_resonances_numeric(ref_params, (150e-9, 100e-9))


def test_ramsey_frequency_extraction(ref_params):
    t = np.linspace(0, 3e-6, 601)
    for e in ("up", "down"):
        sig = ramsey_signal(ref_params, e, t, t2_star=2e-3)
        f = extract_frequency(t, sig)
        assert f == pytest.approx(eigenfrequency(ref_params, e), rel=1e-6)


@pytest.fixture(scope="module")
def cond_gate(ref_params):
    return solve_conditional_rotation(ref_params)


def test_conditional_rotation(cond_gate):
    assert cond_gate.infidelity < 1e-3
    assert cond_gate.n_pulses % 2 == 0
    assert process_fidelity(cond_gate.target_unitary, cond_gate.achieved_unitary) > 1 - 1e-3
    (_, a_up), (_, a_down) = cond_gate.r_up, cond_gate.r_down
    assert a_up == pytest.approx(math.pi / 2, abs=0.05) or a_up == pytest.approx(3 * math.pi / 2, abs=0.05)
    assert cond_gate.sequence.n_pi_pulses == cond_gate.n_pulses


def test_unconditional_rotation(ref_params):
    g = unconditional_rotation(ref_params, "x", math.pi / 2)
    assert g.infidelity < 1e-2
    u = g.achieved_unitary
    assert process_fidelity(u[:2, :2], rx(math.pi / 2)) > 0.98
    assert process_fidelity(u[2:, 2:], rx(math.pi / 2)) > 0.98


def test_unconditional_z_rotation(ref_params):
    # echoed waits leave a small residue from the tilted precession axes
    g = unconditional_rotation(ref_params, "z", 1.1)
    assert g.infidelity < 1e-3
    idle = unconditional_rotation(ref_params, "x", 0.0)
    assert idle.infidelity < 1e-12 and len(idle.sequence) == 0


def test_unconditional_failure_reports_best(ref_params):
    with pytest.raises(SynthesisError) as err:
        unconditional_rotation(ref_params, "x", math.pi / 2, tol=1e-12, max_duration=5e-6)
    assert err.value.best is None or err.value.best.infidelity > 1e-12


def test_cnot_quality(cnot_gate):
    assert cnot_gate.infidelity < 1e-2
    assert process_fidelity(CNOT_DOWN, cnot_gate.achieved_unitary) > 0.99
    assert cnot_gate.max_abs_deviation() < 1e-2
    assert cnot_gate.duration < 200e-6
    d = json.loads(cnot_gate.to_json())
    assert {"target", "N", "tau_ns", "pulse list", "achieved_unitary", "infidelity", "frames"} <= set(d)
    assert len(d["achieved_unitary"]) == 4


def test_cnot_frames_reproduce_unitary(cnot_gate):
    from nodesim.hyperfine import apply_frames

    assert np.allclose(apply_frames(cnot_gate.raw_unitary, cnot_gate.frames), cnot_gate.achieved_unitary)


def test_mean_frequency(ref_params):
    assert mean_frequency(ref_params) == pytest.approx(
        (eigenfrequency(ref_params, "up") + eigenfrequency(ref_params, "down")) / 2
    )


@pytest.mark.xfail(strict=True, reason="the two conditional axes are 10.3 degrees apart for these couplings")
def test_axes_twelve_degrees_apart(ref_params):
    assert math.degrees(conditional_precession(ref_params).axis_angle_between) == pytest.approx(12.2, abs=0.1)


@pytest.mark.xfail(strict=True, reason="finite-N side lobes and the k=1 resonance also dip below 0.9")
def test_single_dip_between_50_and_500_ns(ref_params):
    assert len(find_resonances_numeric(ref_params, (50e-9, 500e-9))) == 1
