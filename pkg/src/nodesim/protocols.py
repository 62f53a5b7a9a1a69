"""Network-node protocols on the spin register.

Photon (x) spin states live on dims [3, 2] with photon modes ordered
(early, late, vacuum); the photon is truncated to the single-photon sector.
Two-qubit register states are ordered electron (x) nucleus.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import CavityParams, find_contrast_frequency, make_rng, readout_confusion_matrix, spin_reflections
from .core import (
    DOWN,
    IDENTITY,
    PAULIS,
    SIGMA_X,
    SIGMA_Z,
    UP,
    DensityMatrix,
    QuantumError,
    bell_state,
    concurrence,
    fidelity_pure,
    project_to_physical,
    rx,
    ry,
    rz,
)
from .engine import NoiseModel, simulate_sequence
from .hyperfine import CNOT_DOWN, HyperfineParams, SynthesizedGate, apply_frames, frame_unitary, synthesize_cnot
from .sequence import MWRotation, PulseSequence, Wait

PHOTON_DIMS = (3, 2)
_E, _L, _VAC = 0, 1, 2


@dataclass(frozen=True)
class TimeBinQubit:
    """beta_e |e> + beta_l |l>; ``mean_photon_number`` None means exactly one photon."""

    beta_e: complex
    beta_l: complex
    mean_photon_number: float | None = None

    def __post_init__(self):
        n = abs(self.beta_e) ** 2 + abs(self.beta_l) ** 2
        if abs(n - 1) > 1e-10:
            raise ValueError(f"time-bin amplitudes must be normalized, got norm^2 = {n}")
        if self.mean_photon_number is not None and not self.mean_photon_number > 0:
            raise ValueError("mean photon number must be positive")

    @classmethod
    def cardinal(cls, name: str) -> "TimeBinQubit":
        s = 1 / math.sqrt(2)
        table = {
            "e": (1, 0),
            "l": (0, 1),
            "+": (s, s),
            "-": (s, -s),
            "+i": (s, 1j * s),
            "-i": (s, -1j * s),
        }
        if name not in table:
            raise ValueError(f"unknown cardinal state {name!r}; valid: {sorted(table)}")
        return cls(*table[name])

    def vector(self) -> np.ndarray:
        return np.array([self.beta_e, self.beta_l, 0.0], dtype=complex)

    def target_spin(self) -> np.ndarray:
        """Spin state the teleportation maps this qubit onto: beta_e|down> + beta_l|up>."""
        return self.beta_l * UP + self.beta_e * DOWN


CARDINALS = ("e", "l", "+", "-", "+i", "-i")


def _photon_spin_op(photon_op: np.ndarray, spin_op: np.ndarray) -> np.ndarray:
    return np.kron(photon_op, spin_op)


def _bin_reflection(bin_index: int, r_up: complex, r_down: complex) -> np.ndarray:
    """Reflection acting on one time bin: that bin picks up r per spin state, others pass."""
    p = np.zeros((3, 3), dtype=complex)
    p[bin_index, bin_index] = 1
    rest = np.eye(3) - p
    return np.kron(p, np.diag([r_up, r_down])) + np.kron(rest, IDENTITY)


def carving_operator(r_up: complex, r_down: complex, mid_pulse: bool = True) -> np.ndarray:
    """Reflect early bin, electron pi pulse, reflect late bin (as a 6x6 operator)."""
    op = _bin_reflection(_E, r_up, r_down)
    if mid_pulse:
        op = np.kron(np.eye(3), rx(math.pi)) @ op
    return _bin_reflection(_L, r_up, r_down) @ op


def carve_reflect(state, r_up: complex, r_down: complex, mid_pulse: bool = True):
    """Conditional reflection of a photon (x) spin state.

    Returns (unnormalized state, survival probability). ``state`` may be a
    6-vector or a DensityMatrix on dims [3, 2]; the unnormalized result is a
    vector or a matrix to match.
    """
    if abs(r_up) > 1 + 1e-9 or abs(r_down) > 1 + 1e-9:
        raise ValueError("reflection amplitudes must satisfy |r| <= 1")
    op = carving_operator(r_up, r_down, mid_pulse)
    if isinstance(state, DensityMatrix):
        if tuple(state.dims) != PHOTON_DIMS:
            raise QuantumError("carving needs a photon (x) spin state on dims [3, 2]")
        m = op @ state.matrix @ op.conj().T
        return m, float(np.real(np.trace(m)))
    v = np.asarray(state, dtype=complex).reshape(-1)
    if v.shape != (6,):
        raise QuantumError("carving needs a photon (x) spin state on dims [3, 2]")
    out = op @ v
    return out, float(np.real(np.vdot(out, out)))


def interferometer_kraus(phase_drift: float = 0.0) -> dict[str, np.ndarray]:
    """Middle-bin detection operators of the unbalanced interferometer (on the photon).

    Early light takes the long arm and late light the short arm, so both
    reach the middle output bin, each with amplitude 1/2 per detector. The
    photon is absorbed on detection, mapping onto a 1-dim space.
    """
    ph = np.exp(1j * phase_drift)
    plus = np.array([[0.5, 0.5 * ph, 0.0]], dtype=complex)
    minus = np.array([[0.5, -0.5 * ph, 0.0]], dtype=complex)
    return {"+": plus, "-": minus}


@dataclass(frozen=True)
class HeraldRecord:
    detector: str
    success_probability: float
    conditional_state: DensityMatrix
    applied_frame_correction: str
    branch_probabilities: dict = field(default_factory=dict)
    fidelity: float = float("nan")


def _reflections(cavity: CavityParams | None) -> tuple[complex, complex]:
    if cavity is None:
        return 1.0 + 0j, 0.0 + 0j
    f_q, _ = find_contrast_frequency(cavity)
    return spin_reflections(cavity, f_q)


def herald_branches(qubit: TimeBinQubit, cavity: CavityParams | None = None, phase_drift: float = 0.0) -> dict:
    """Probability and unnormalized conditional spin state for '+', '-' and no click."""
    spin0 = ry(math.pi / 2) @ UP  # pumped to up, then pi/2 to |->
    psi = np.kron(qubit.vector(), spin0)
    r_up, r_down = _reflections(cavity)
    carved, _ = carve_reflect(psi, r_up, r_down)
    out = {}
    total = 1.0
    for name, k in interferometer_kraus(phase_drift).items():
        spin = np.kron(k, IDENTITY) @ carved
        p = float(np.real(np.vdot(spin, spin)))
        out[name] = (p, spin)
        total -= p
    out["none"] = (max(total, 0.0), None)
    return out


def teleport_photon(
    qubit: TimeBinQubit,
    cavity: CavityParams | None = None,
    seed=None,
    detector: str | None = None,
    herald_error: float = 0.0,
    phase_drift: float = 0.0,
) -> HeraldRecord:
    """Heralded transfer of a time-bin qubit onto the electron spin.

    ``cavity`` None uses ideal amplitudes (r_up = 1, r_down = 0); otherwise
    the amplitudes at the contrast optimum. The herald arm is ``detector``
    if given, else drawn from the conditional click statistics with
    ``seed``. A '-' click is corrected by a Z on the spin. ``herald_error``
    is the chance the click came from a multi-photon or dark event, which
    leaves the spin fully mixed.
    """
    if not 0 <= herald_error <= 1:
        raise ValueError("herald_error must lie in [0, 1]")
    branches = herald_branches(qubit, cavity, phase_drift)
    p_plus, p_minus = branches["+"][0], branches["-"][0]
    success = p_plus + p_minus
    if detector is None:
        if success <= 0:
            raise QuantumError("no herald branch has non-zero probability")
        detector = "+" if make_rng(0 if seed is None else seed).random() < p_plus / success else "-"
    if detector not in ("+", "-"):
        raise ValueError("detector must be '+' or '-'")
    p, spin = branches[detector]
    if p <= 1e-14:
        raise QuantumError(f"herald branch {detector!r} has zero probability")
    spin = spin / math.sqrt(p)
    correction = "I"
    if detector == "-":
        spin = SIGMA_Z @ spin
        correction = "Z"
    rho = np.outer(spin, spin.conj())
    rho = (1 - herald_error) * rho + herald_error * IDENTITY / 2
    state = DensityMatrix([2], rho)
    probs = {k: v[0] for k, v in branches.items()}
    return HeraldRecord(detector, success, state, correction, probs, fidelity_pure(state, qubit.target_spin()))


def storage_sequence(storage_time: float) -> PulseSequence:
    """Wait(T) - pi - Wait(T) with 2T = storage_time."""
    if storage_time < 0:
        raise ValueError("storage time must be >= 0")
    half = storage_time / 2
    return PulseSequence((Wait(half), MWRotation(math.pi), Wait(half)), "storage", "identity up to pi")


def heralded_storage(
    qubit: TimeBinQubit,
    storage_time: float,
    noise: NoiseModel | None = None,
    seed=None,
    cavity: CavityParams | None = None,
    with_readout: bool = False,
    detector: str | None = None,
) -> tuple[DensityMatrix, float]:
    """Teleport, store for ``storage_time`` (= 2T) behind one echo pulse, and score.

    The fidelity is against the ideal map (teleported target followed by the
    echo pulse). ``with_readout`` reports the fidelity seen through the
    readout confusion of ``noise`` for a measurement in the target basis.
    """
    rec = teleport_photon(qubit, cavity, seed=seed, detector=detector)
    seq = storage_sequence(storage_time)
    out = simulate_sequence(seq, rec.conditional_state, (), noise)
    target = rx(math.pi) @ qubit.target_spin()
    f = fidelity_pure(out, target)
    if with_readout and noise is not None:
        c = readout_confusion_matrix(noise.readout)
        f = f * c[0, 0] + (1 - f) * c[0, 1]
    return out, f


def storage_average_fidelity(storage_time: float, noise: NoiseModel | None, inputs=("+", "-"), **kw) -> float:
    return float(np.mean([heralded_storage(TimeBinQubit.cardinal(s), storage_time, noise, **kw)[1] for s in inputs]))


# Tomography

BASES = ("X", "Y", "Z")
# rotation taking the +1 eigenstate of each Pauli to |up>
_TO_Z = {"X": ry(-math.pi / 2), "Y": rx(math.pi / 2), "Z": IDENTITY}


def basis_probabilities(rho: DensityMatrix, be: str, bn: str) -> np.ndarray:
    """Outcome distribution (uu, ud, du, dd) for electron basis ``be``, nuclear basis ``bn``."""
    u = np.kron(_TO_Z[be], _TO_Z[bn])
    m = u @ rho.matrix @ u.conj().T
    p = np.clip(np.real(np.diag(m)), 0.0, None)
    return p / p.sum()


def correct_readout(raw, confusions) -> tuple[np.ndarray, float]:
    """Invert per-qubit confusion matrices on a joint outcome distribution.

    ``confusions`` lists one 2x2 column-stochastic matrix per qubit (most
    significant first). Negative entries are clipped and the result
    renormalized. Returns (corrected, L1 distance between raw and corrected).
    """
    raw = np.asarray(raw, dtype=float)
    full = np.array([[1.0]])
    for c in confusions:
        c = np.asarray(c, dtype=float)
        if abs(np.linalg.det(c)) < 1e-12:
            raise QuantumError("confusion matrix is singular")
        full = np.kron(full, c)
    if full.shape[0] != raw.shape[-1]:
        raise QuantumError("confusion matrices do not match the distribution size")
    est = np.linalg.solve(full, raw.T).T
    est = np.clip(est, 0.0, None)
    est = est / est.sum(axis=-1, keepdims=True)
    return est, float(np.abs(est - raw).sum())


_SIGNS = {
    # outcome order uu, ud, du, dd; eigenvalue +1 for up
    "II": np.array([1, 1, 1, 1]),
    "PI": np.array([1, 1, -1, -1]),
    "IP": np.array([1, -1, 1, -1]),
    "PP": np.array([1, -1, -1, 1]),
}


def pauli_expectations(tables: dict) -> dict[str, float]:
    """Two-qubit Pauli expectations from the 9 basis-pair tables.

    Single-qubit terms are averaged over the bases of the other qubit.
    """
    ex = {"II": 1.0}
    for a in BASES:
        ex[a + "I"] = float(np.mean([tables[a + b] @ _SIGNS["PI"] for b in BASES]))
        ex["I" + a] = float(np.mean([tables[b + a] @ _SIGNS["IP"] for b in BASES]))
        for b in BASES:
            ex[a + b] = float(tables[a + b] @ _SIGNS["PP"])
    return ex


def linear_inversion(ex: dict[str, float]) -> np.ndarray:
    m = sum(v * np.kron(PAULIS[k[0]], PAULIS[k[1]]) for k, v in ex.items())
    return m / 4


def bell_fidelity(ex: dict[str, float], target: np.ndarray) -> float:
    """F = sum_P <P>_rho <P>_target / 4 over the 16 two-qubit Paulis."""
    t = np.outer(target, target.conj())
    return float(sum(v * np.real(np.trace(t @ np.kron(PAULIS[k[0]], PAULIS[k[1]]))) for k, v in ex.items()) / 4)


@dataclass
class TomographyResult:
    raw_probabilities: dict
    corrected_probabilities: dict
    fidelity: float
    fidelity_err: float
    concurrence: float
    concurrence_err: float
    state: DensityMatrix
    target: str
    shots: int | None = None
    corrected: bool = True
    herald_rate: float = 1.0
    params_hash: str = ""
    gate_infidelity: float = 0.0

    def to_dict(self) -> dict:
        def r(x):
            return float(f"{x:.9g}")

        return {
            "protocol": "bell",
            "params_hash": self.params_hash,
            "shots": self.shots,
            "herald_rate": r(self.herald_rate),
            "fidelity": r(self.fidelity),
            "fidelity_err": r(self.fidelity_err),
            "concurrence": r(self.concurrence),
            "concurrence_err": r(self.concurrence_err),
            "corrected": self.corrected,
            "target": self.target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def params_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _analyze(tables: dict, target: np.ndarray) -> tuple[float, float, DensityMatrix]:
    ex = pauli_expectations(tables)
    rho = DensityMatrix([2, 2], project_to_physical(linear_inversion(ex)))
    return bell_fidelity(ex, target), concurrence(rho), rho


def prepare_bell_state(
    params: HyperfineParams | None,
    cnot: str | SynthesizedGate = "ideal",
    nucleus: str = "down",
    noise: NoiseModel | None = None,
    frames: bool = True,
) -> tuple[DensityMatrix, float]:
    """|down, nucleus> -> electron R_y(-pi/2) -> CNOT (flip on electron down).

    A synthesized gate is taken from ``cnot`` or built from ``params``. Without
    noise its achieved unitary is applied; with noise its pulse sequence runs
    through the engine and the recorded software frames follow. ``frames``
    False skips those frame corrections. Returns (state, gate infidelity).
    """
    nuc = DOWN if nucleus == "down" else UP
    psi = np.kron(ry(-math.pi / 2) @ DOWN, nuc)
    rho = DensityMatrix.from_ket([2, 2], psi)
    if isinstance(cnot, str) and cnot == "ideal":
        out = CNOT_DOWN @ rho.matrix @ CNOT_DOWN.conj().T
        return DensityMatrix([2, 2], out), 0.0
    gate = cnot if isinstance(cnot, SynthesizedGate) else synthesize_cnot(params)
    fr = gate.frames if frames else {}
    if noise is None:
        u = apply_frames(gate.raw_unitary, fr)
        return DensityMatrix([2, 2], u @ rho.matrix @ u.conj().T), gate.infidelity
    post, pre = frame_unitary(fr)
    start = DensityMatrix([2, 2], pre @ rho.matrix @ pre.conj().T)
    evolved = simulate_sequence(gate.sequence, start, [params], noise)
    out = post @ evolved.matrix @ post.conj().T
    return DensityMatrix([2, 2], out), gate.infidelity


def bell_protocol(
    params: HyperfineParams | None = None,
    noise: NoiseModel | None = None,
    seed=None,
    cnot: str | SynthesizedGate = "synthesized",
    werner_p: float | None = None,
    shots: int | None = None,
    correct: bool = True,
    nucleus: str = "down",
    bootstrap: int = 200,
    frames: bool = True,
) -> TomographyResult:
    """Bell-state preparation and readout-corrected two-qubit tomography.

    All 9 Pauli basis pairs are measured. Readout errors follow the
    confusion matrix of ``noise.readout`` on both qubits (the nucleus is read
    through the electron); without ``noise`` the readout is perfect.
    ``werner_p`` mixes the prepared state with white noise. With ``shots``
    the tables are sampled and uncertainties come from a parametric
    bootstrap; otherwise exact probabilities and zero errors are used.
    """
    if params is None and cnot == "synthesized":
        raise ValueError("a synthesized CNOT needs hyperfine parameters")
    target = bell_state("psi+" if nucleus == "down" else "phi+")
    rho, gate_inf = prepare_bell_state(params, cnot, nucleus, noise, frames)
    if werner_p is not None:
        if not 0 <= werner_p <= 1:
            raise ValueError("werner_p must lie in [0, 1]")
        rho = DensityMatrix([2, 2], werner_p * rho.matrix + (1 - werner_p) * np.eye(4) / 4)
    conf = readout_confusion_matrix(noise.readout) if noise is not None else np.eye(2)
    c_full = np.kron(conf, conf)
    true_tables = {a + b: basis_probabilities(rho, a, b) for a in BASES for b in BASES}
    raw = {k: c_full @ v for k, v in true_tables.items()}
    rng = make_rng(0 if seed is None else seed)
    if shots is not None:
        if shots < 1:
            raise ValueError("shots must be >= 1")
        raw = {k: rng.multinomial(shots, v / v.sum()) / shots for k, v in raw.items()}

    def fix(tables):
        if not correct:
            return tables
        return {k: correct_readout(v, [conf, conf])[0] for k, v in tables.items()}

    corrected = fix(raw)
    fid, conc, est = _analyze(corrected, target)
    f_err = c_err = 0.0
    if shots is not None and bootstrap > 0:
        fs, cs = [], []
        for _ in range(bootstrap):
            boot = {k: rng.multinomial(shots, v / v.sum()) / shots for k, v in raw.items()}
            f, c, _ = _analyze(fix(boot), target)
            fs.append(f)
            cs.append(c)
        f_err, c_err = float(np.std(fs, ddof=1)), float(np.std(cs, ddof=1))
    info = {"params": params.to_mhz() if params else None, "werner_p": werner_p, "shots": shots, "nucleus": nucleus}
    return TomographyResult(
        raw,
        corrected,
        fid,
        f_err,
        conc,
        c_err,
        est,
        "psi+" if nucleus == "down" else "phi+",
        shots,
        correct,
        1.0,
        params_hash(info),
        gate_inf,
    )


def distribution_range(memory_time: float, fiber_speed: float = 2e8) -> float:
    """Fiber distance a heralding signal covers within the memory time (one way)."""
    if memory_time < 0 or not fiber_speed > 0:
        raise ValueError("memory time must be >= 0 and fiber speed positive")
    return fiber_speed * memory_time
