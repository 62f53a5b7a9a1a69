"""Electron-conditioned nuclear precession and decoupling-based nuclear gates.

With the electron spin frozen along its quantization axis, a weakly coupled
13C nucleus precesses about one of two axes depending on the electron state:

    H_up   = (w_l + A_par/2) sz/2 + (A_perp/2) sx/2
    H_down = (w_l - A_par/2) sz/2 - (A_perp/2) sx/2

Instantaneous electron pi pulses swap the two Hamiltonians, so a decoupling
sequence (tau - pi - tau)^N produces a pair of nuclear rotations, one per
initial electron state. Everything here works with those pairs.

SU(2) elements are carried as quaternions ``q = (a, bx, by, bz)`` meaning
``a*I - i*(b . sigma)``, which keeps sweeps over tau vectorized.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .core import IDENTITY, SIGMA_X, SIGMA_Z, TWO_PI, axis_angle, process_fidelity, rx, rz
from .sequence import MWRotation, PulseSequence, Wait, decoupling_sequence, echo_wait

SIGNAL_THRESHOLD = 0.9


class SynthesisError(RuntimeError):
    """Gate search failed; ``best`` holds the best candidate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class HyperfineParams:
    """Angular frequencies (rad/s); A_perp is signed."""

    omega_l: float
    A_par: float
    A_perp: float

    def __post_init__(self):
        if self.omega_l <= 0:
            raise ValueError("omega_l must be positive")
        if abs(self.A_par) >= self.omega_l or abs(self.A_perp) >= self.omega_l:
            raise ValueError("weak coupling requires |A_par|, |A_perp| < omega_l")

    @classmethod
    def from_mhz(cls, omega_l: float, A_par: float, A_perp: float) -> "HyperfineParams":
        w = TWO_PI * 1e6
        return cls(omega_l * w, A_par * w, A_perp * w)

    def to_mhz(self) -> dict:
        w = TWO_PI * 1e6
        return {"omega_l": self.omega_l / w, "A_par": self.A_par / w, "A_perp": self.A_perp / w}


REFERENCE_HYPERFINE = HyperfineParams.from_mhz(2.0, 0.70, -0.35)


def _sign(electron) -> int:
    if electron in (1, "up", "u", "↑"):
        return 1
    if electron in (-1, "down", "d", "↓"):
        return -1
    raise ValueError(f"electron state must be 'up' or 'down', got {electron!r}")


def _field(params: HyperfineParams, s: int) -> tuple[float, float]:
    """(x, z) components of the conditional precession vector."""
    return s * params.A_perp / 2, params.omega_l + s * params.A_par / 2


def hamiltonian(params: HyperfineParams, electron) -> np.ndarray:
    hx, hz = _field(params, _sign(electron))
    return hz * SIGMA_Z / 2 + hx * SIGMA_X / 2


def eigenfrequency(params: HyperfineParams, electron) -> float:
    hx, hz = _field(params, _sign(electron))
    return math.hypot(hx, hz)


def mean_frequency(params: HyperfineParams) -> float:
    """Electron-averaged nuclear precession frequency."""
    return (eigenfrequency(params, "up") + eigenfrequency(params, "down")) / 2


def register_hamiltonian(nuclei) -> np.ndarray:
    """Full electron (x) nuclei Hamiltonian in the electron rotating frame."""
    nuclei = list(nuclei)
    n = len(nuclei)
    dim = 2 ** (n + 1)
    h = np.zeros((dim, dim), dtype=complex)
    for j, p in enumerate(nuclei):
        up = hamiltonian(p, "up")
        down = hamiltonian(p, "down")
        left = np.eye(2 ** j)
        right = np.eye(2 ** (n - j - 1))
        h += np.kron(np.diag([1.0, 0.0]), np.kron(left, np.kron(up, right)))
        h += np.kron(np.diag([0.0, 1.0]), np.kron(left, np.kron(down, right)))
    return h


@dataclass(frozen=True)
class ConditionalPrecession:
    axis_up: np.ndarray
    axis_down: np.ndarray
    freq_up: float
    freq_down: float

    @property
    def axis_angle_between(self) -> float:
        return float(np.arccos(np.clip(self.axis_up @ self.axis_down, -1, 1)))


def conditional_precession(params: HyperfineParams) -> ConditionalPrecession:
    axes = []
    for s in (1, -1):
        hx, hz = _field(params, s)
        v = np.array([hx, 0.0, hz])
        axes.append(v / np.linalg.norm(v))
    return ConditionalPrecession(axes[0], axes[1], eigenfrequency(params, "up"), eigenfrequency(params, "down"))


def resonance_time(k: int, params: HyperfineParams) -> float:
    """Half interpulse spacing of the k-th decoupling resonance, in seconds."""
    if int(k) != k or k < 0:
        raise ValueError("resonance order k must be a non-negative integer")
    x = params.A_perp / (2 * params.omega_l)
    return (2 * k + 1) * math.pi / (2 * params.omega_l) * (1 - 0.5 * x**2)


# Quaternion algebra

def _q_free(params: HyperfineParams, s: int, t) -> np.ndarray:
    """exp(-i H_s t) as quaternions, broadcast over t."""
    t = np.asarray(t, dtype=float)
    hx, hz = _field(params, s)
    w = math.hypot(hx, hz)
    c = np.cos(w * t / 2)
    sn = np.sin(w * t / 2)
    zero = np.zeros_like(t)
    return np.stack([c, sn * hx / w, zero, sn * hz / w], axis=-1)


def q_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    a1, b1 = p[..., 0], p[..., 1:]
    a2, b2 = q[..., 0], q[..., 1:]
    a = a1 * a2 - np.sum(b1 * b2, axis=-1)
    b = a1[..., None] * b2 + a2[..., None] * b1 + np.cross(b1, b2)
    return np.concatenate([a[..., None], b], axis=-1)


def q_pow(q: np.ndarray, n: int) -> np.ndarray:
    a = np.clip(q[..., 0], -1.0, 1.0)
    half = np.arccos(a)
    sn = np.sin(half)
    safe = np.where(np.abs(sn) < 1e-300, 1.0, sn)
    axis = q[..., 1:] / safe[..., None]
    return np.concatenate([np.cos(n * half)[..., None], np.sin(n * half)[..., None] * axis], axis=-1)


def q_to_matrix(q: np.ndarray) -> np.ndarray:
    a, bx, by, bz = (q[..., i] for i in range(4))
    m = np.empty(q.shape[:-1] + (2, 2), dtype=complex)
    m[..., 0, 0] = a - 1j * bz
    m[..., 0, 1] = -1j * bx - by
    m[..., 1, 0] = -1j * bx + by
    m[..., 1, 1] = a + 1j * bz
    return m


def q_from_matrix(u: np.ndarray) -> np.ndarray:
    """Quaternion of an SU(2) matrix (determinant 1 assumed)."""
    a = np.real(u[0, 0] + u[1, 1]) / 2
    bz = -np.imag(u[0, 0] - u[1, 1]) / 2
    bx = -np.imag(u[0, 1] + u[1, 0]) / 2
    by = np.real(u[1, 0] - u[0, 1]) / 2
    return np.array([a, bx, by, bz])


def free_evolution(params: HyperfineParams, electron, t: float) -> np.ndarray:
    """Nuclear propagator exp(-i H t) for a frozen electron state."""
    return q_to_matrix(_q_free(params, _sign(electron), t))


def decoupling_quaternions(params: HyperfineParams, tau, n_pulses: int) -> tuple[np.ndarray, np.ndarray]:
    """Nuclear rotations after (tau - pi - tau)^N for electron starting up / down.

    N must be even so that the electron ends in its initial state.
    """
    if n_pulses % 2:
        raise ValueError("an even number of pi pulses is required")
    out = []
    for s in (1, -1):
        unit = q_mul(_q_free(params, s, tau), q_mul(_q_free(params, -s, 2 * np.asarray(tau)), _q_free(params, s, tau)))
        out.append(q_pow(unit, n_pulses // 2))
    return out[0], out[1]


def branch_unitaries(params: HyperfineParams, tau: float, n_pulses: int) -> tuple[np.ndarray, np.ndarray]:
    qu, qd = decoupling_quaternions(params, tau, n_pulses)
    return q_to_matrix(qu), q_to_matrix(qd)


def coherence_signal(nuclei, taus, n_pulses: int) -> np.ndarray:
    """Electron coherence after pi/2 - (tau - pi - tau)^N - pi/2 with unpolarized nuclei.

    Each nucleus contributes Re Tr(V_down^dag V_up)/2; the factors multiply.
    """
    if isinstance(nuclei, HyperfineParams):
        nuclei = [nuclei]
    taus = np.asarray(taus, dtype=float)
    sig = np.ones_like(taus)
    for p in nuclei:
        qu, qd = decoupling_quaternions(p, taus, n_pulses)
        # Re Tr(V_d^dag V_u)/2 = quaternion inner product
        sig = sig * np.sum(qu * qd, axis=-1)
    return sig


@dataclass(frozen=True)
class Dip:
    tau: float  # centre of the lobe between the neighbouring maxima
    tau_min: float  # location of the signal minimum
    depth: float  # signal value at the minimum

    def __float__(self) -> float:
        return self.tau


def _refine_extremum(f, lo, hi, sign):
    res = optimize.minimize_scalar(lambda t: sign * f(t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-15})
    return float(res.x), float(f(res.x))


def find_resonances_numeric(
    nuclei,
    window: tuple[float, float],
    n_pulses: int = 16,
    step: float = 0.25e-9,
    threshold: float = SIGNAL_THRESHOLD,
) -> list[Dip]:
    """Brute-force dip search in the decoupling coherence signal.

    Every grid local minimum below ``threshold`` is reported. The dip position
    is the midpoint of the two local maxima enclosing it: at finite N the
    filter envelope skews the lobe so the raw minimum sits off resonance,
    while the bounding maxima stay symmetric. The minimum is kept as
    ``tau_min``. A lobe that runs into the window edge uses the edge.
    """
    lo, hi = window
    if not hi > lo > 0:
        raise ValueError("window must satisfy 0 < lo < hi")
    if step > 1e-9:
        raise ValueError("grid step must be <= 1 ns")
    n = int(math.ceil((hi - lo) / step)) + 1
    taus = np.linspace(lo, hi, n)
    sig = coherence_signal(nuclei, taus, n_pulses)

    def f(t):
        return float(coherence_signal(nuclei, np.array([t]), n_pulses)[0])

    interior = np.arange(1, n - 1)
    minima = interior[(sig[interior] < sig[interior - 1]) & (sig[interior] <= sig[interior + 1])]
    minima = minima[sig[minima] < threshold]
    maxima = interior[(sig[interior] >= sig[interior - 1]) & (sig[interior] > sig[interior + 1])]
    dips = []
    for i in minima:
        left = maxima[maxima < i]
        right = maxima[maxima > i]
        a = _refine_extremum(f, taus[left[-1] - 1], taus[left[-1] + 1], -1)[0] if left.size else lo
        b = _refine_extremum(f, taus[right[0] - 1], taus[right[0] + 1], -1)[0] if right.size else hi
        t_min, depth = _refine_extremum(f, taus[i - 1], taus[i + 1], 1)
        dips.append(Dip((a + b) / 2, t_min, depth))
    return dips


# Gate synthesis

def _quat_rot(axis, angle) -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * n])


def _q_rz(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    z = np.zeros_like(a)
    return np.stack([np.cos(a / 2), z, z, np.sin(a / 2)], axis=-1)


def _q_inner(p, q):
    """Tr(P^dag Q)/2 for SU(2) quaternions, which is real."""
    return np.sum(p * q, axis=-1)


def _pair_overlap(tu, td, qu, qd, b, c):
    """(|<T_u, Rz(b) V_u Rz(c)>| + |<T_d, ...>|)/2, broadcast over b, c arrays."""
    rb = _q_rz(b)
    rc = _q_rz(c)
    xu = q_mul(rb, q_mul(qu, rc))
    xd = q_mul(rb, q_mul(qd, rc))
    return (np.abs(_q_inner(tu, xu)) + np.abs(_q_inner(td, xd))) / 2


def fit_nuclear_frames(tu, td, qu, qd, grid: int = 24) -> tuple[float, float, float]:
    """Best nuclear Z frames (post b, pre c) for an electron-controlled pair.

    Returns (infidelity, b, c); the relative electron phase is optimized in
    closed form by taking magnitudes of each branch overlap.
    """
    g = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    bb, cc = np.meshgrid(g, g, indexing="ij")
    ov = _pair_overlap(tu, td, qu, qd, bb, cc)
    i, j = np.unravel_index(np.argmax(ov), ov.shape)

    def cost(x):
        return 1.0 - float(_pair_overlap(tu, td, qu, qd, x[0], x[1])) ** 2

    res = optimize.minimize(cost, [g[i], g[j]], method="Nelder-Mead", options={"xatol": 1e-11, "fatol": 1e-16})
    return max(float(res.fun), 0.0), float(res.x[0]), float(res.x[1])


def _controlled(m_up: np.ndarray, m_down: np.ndarray) -> np.ndarray:
    u = np.zeros((4, 4), dtype=complex)
    u[:2, :2] = m_up
    u[2:, 2:] = m_down
    return u


def _pair_fidelity_no_frames(tu, td, qu, qd) -> float:
    return float(((abs(_q_inner(tu, qu)) + abs(_q_inner(td, qd))) / 2) ** 2)


def _electron_phase(t_up, t_down, m_up, m_down) -> float:
    """Electron Z angle that aligns the relative phase of the two branch overlaps."""
    ou = np.trace(t_up.conj().T @ m_up)
    od = np.trace(t_down.conj().T @ m_down)
    # rz(a) on the electron multiplies the up block by e^{-ia/2}, down by e^{ia/2}
    return float(np.angle(ou) - np.angle(od))


@dataclass
class SynthesizedGate:
    """A pulse sequence together with the register unitary it realizes.

    ``achieved_unitary`` includes the software frame corrections recorded in
    ``frames`` (angles of Z rotations: electron after the gate, nucleus
    before and after). ``raw_unitary`` is the sequence alone.
    """

    sequence: PulseSequence
    achieved_unitary: np.ndarray
    target: str
    infidelity: float
    target_unitary: np.ndarray
    n_pulses: int = 0
    tau: float = 0.0
    raw_unitary: np.ndarray | None = None
    frames: dict = field(default_factory=lambda: {"electron_z": 0.0, "nuclear_pre_z": 0.0, "nuclear_post_z": 0.0})
    components: tuple = ()

    @property
    def duration(self) -> float:
        return self.sequence.duration

    @property
    def r_up(self):
        return axis_angle(self.achieved_unitary[:2, :2])

    @property
    def r_down(self):
        return axis_angle(self.achieved_unitary[2:, 2:])

    def max_abs_deviation(self) -> float:
        """Elementwise distance to the target after removing the global phase."""
        ov = np.trace(self.target_unitary.conj().T @ self.achieved_unitary)
        ph = ov / abs(ov) if abs(ov) > 0 else 1.0
        return float(np.max(np.abs(self.achieved_unitary / ph - self.target_unitary)))

    def to_dict(self) -> dict:
        u = self.achieved_unitary
        return {
            "target": self.target,
            "N": int(self.n_pulses),
            "tau_ns": float(f"{self.tau * 1e9:.9g}"),
            "pulse list": self.sequence.to_list(),
            "achieved_unitary": [[[float(f"{z.real:.9g}"), float(f"{z.imag:.9g}")] for z in row] for row in u],
            "infidelity": float(f"{self.infidelity:.9g}"),
            "frames": {k: float(f"{v:.9g}") for k, v in self.frames.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def frame_unitary(frames: dict) -> tuple[np.ndarray, np.ndarray]:
    """(post, pre) 4x4 frame corrections on electron (x) nucleus."""
    post = np.kron(rz(frames.get("electron_z", 0.0)), rz(frames.get("nuclear_post_z", 0.0)))
    pre = np.kron(IDENTITY, rz(frames.get("nuclear_pre_z", 0.0)))
    return post, pre


def apply_frames(raw: np.ndarray, frames: dict) -> np.ndarray:
    post, pre = frame_unitary(frames)
    return post @ raw @ pre


def _frames_for(t_up, t_down, qu, qd, use_nuclear: bool):
    """Fit frames for a controlled pair; returns (infidelity, frames dict)."""
    tqu, tqd = q_from_matrix(t_up), q_from_matrix(t_down)
    if use_nuclear:
        inf, b, c = fit_nuclear_frames(tqu, tqd, qu, qd)
    else:
        inf, b, c = 1.0 - _pair_fidelity_no_frames(tqu, tqd, qu, qd), 0.0, 0.0
    mu = rz(b) @ q_to_matrix(qu) @ rz(c)
    md = rz(b) @ q_to_matrix(qd) @ rz(c)
    a = _electron_phase(t_up, t_down, mu, md)
    return max(inf, 0.0), {"electron_z": a, "nuclear_pre_z": c, "nuclear_post_z": b}


def conditional_angle(params: HyperfineParams, tau, n_pulses: int) -> np.ndarray:
    """Half the SO(3) angle of V_up V_down^dag; pi/2 for R_x(+-pi/2)."""
    qu, qd = decoupling_quaternions(params, tau, n_pulses)
    rel = np.abs(np.sum(qu * qd, axis=-1))  # |Tr(V_d^dag V_u)|/2
    return np.arccos(np.clip(rel, 0.0, 1.0))


def _cond_targets(sign: int, angle: float):
    return rx(sign * angle), rx(-sign * angle)


def conditional_rotation(
    params: HyperfineParams, n_pulses: int, tau: float, angle: float = math.pi / 2, frames: bool = True
) -> SynthesizedGate:
    """Electron-controlled nuclear rotation pair from (tau - pi - tau)^N.

    The target is R_x(+angle) on electron up and R_x(-angle) on electron down,
    or the mirrored sign, whichever the sequence is closer to.
    """
    if n_pulses % 2 or n_pulses < 0:
        raise ValueError("conditional rotations need an even, non-negative number of pulses")
    if tau <= 0:
        raise ValueError("tau must be positive")
    qu, qd = decoupling_quaternions(params, tau, n_pulses)
    best = None
    for sign in (1, -1):
        t_up, t_down = _cond_targets(sign, angle)
        inf, fr = _frames_for(t_up, t_down, qu, qd, frames)
        if best is None or inf < best[0]:
            best = (inf, fr, sign, t_up, t_down)
    inf, fr, sign, t_up, t_down = best
    raw = _controlled(q_to_matrix(qu), q_to_matrix(qd))
    target = _controlled(t_up, t_down)
    achieved = apply_frames(raw, fr)
    seq = PulseSequence(tuple(decoupling_sequence(n_pulses, tau)), "conditional_rotation", f"CRx({'+' if sign > 0 else '-'})")
    return SynthesizedGate(
        seq,
        achieved,
        f"CRx({'+' if sign > 0 else '-'}{angle:.6g})",
        float(1.0 - process_fidelity(target, achieved)),
        target,
        n_pulses,
        tau,
        raw,
        fr,
    )


def _refine_tau(cost, lo, hi, grid=61):
    taus = np.linspace(lo, hi, grid)
    vals = np.array([cost(t) for t in taus])
    i = int(np.argmin(vals))
    a, b = taus[max(i - 1, 0)], taus[min(i + 1, grid - 1)]
    res = optimize.minimize_scalar(cost, bounds=(a, b), method="bounded", options={"xatol": 1e-16})
    if res.fun <= vals[i]:
        return float(res.x), float(res.fun)
    return float(taus[i]), float(vals[i])


def solve_conditional_rotation(
    params: HyperfineParams,
    k: int = 0,
    angle: float = math.pi / 2,
    tol: float = 1e-3,
    max_pulses: int = 200,
    window: float = 0.03,
) -> SynthesizedGate:
    """Smallest even N near the k-th resonance reaching ``tol`` process infidelity.

    For each N the conditional angle must be able to reach ``angle`` inside a
    +-``window`` relative band around resonance_time(k); tau is then refined
    to minimize the frame-corrected infidelity.
    """
    tk = resonance_time(k, params)
    lo, hi = tk * (1 - window), tk * (1 + window)
    scan = np.linspace(lo, hi, 601)
    best = None
    for n in range(2, max_pulses + 1, 2):
        ca = conditional_angle(params, scan, n)
        if ca.max() < angle - 0.2:
            continue
        gate_cost = lambda t: conditional_rotation(params, n, t, angle).infidelity
        # candidate taus: where the conditional angle crosses the target
        cross = np.nonzero(np.diff(np.sign(ca - angle)))[0]
        starts = [scan[i] for i in cross] or [scan[int(np.argmax(ca))]]
        for t0 in starts:
            span = (hi - lo) / 60
            t, inf = _refine_tau(gate_cost, max(lo, t0 - span), min(hi, t0 + span), grid=21)
            if best is None or inf < best.infidelity:
                best = conditional_rotation(params, n, t, angle)
        if best is not None and best.infidelity <= tol:
            return best
    raise SynthesisError(f"no conditional rotation within tolerance {tol} up to N={max_pulses}", best)


def _unconditional_target(axis: str, angle: float) -> np.ndarray:
    axes = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1), "-x": (-1, 0, 0), "-y": (0, -1, 0), "-z": (0, 0, -1)}
    n = np.asarray(axes[axis], dtype=float)
    m = np.cos(angle / 2) * IDENTITY - 1j * np.sin(angle / 2) * (
        n[0] * SIGMA_X + n[1] * np.array([[0, -1j], [1j, 0]]) + n[2] * SIGMA_Z
    )
    return m


def unconditional_rotation(
    params: HyperfineParams,
    axis: str = "x",
    angle: float = math.pi / 2,
    tol: float = 1e-2,
    max_duration: float = 200e-6,
    max_pulses: int = 400,
    harmonics: int = 60,
) -> SynthesizedGate:
    """Electron-independent nuclear rotation from decoupling or echoed waits.

    Z rotations use an echoed free evolution of duration angle/mean_frequency.
    In-plane rotations are searched on (N, tau) grids placed around the
    even decoupling harmonics tau = m pi / (2 w_mean), m even, where both
    electron branches rotate about a common axis; the shortest sequence
    within ``tol`` wins, ties broken by infidelity.
    """
    if axis in ("z", "-z") or angle % (2 * math.pi) == 0:
        return _z_rotation(params, axis, angle)
    if not 0 < angle < 2 * math.pi:
        raise ValueError("target angle must lie in (0, 2 pi)")
    target = _unconditional_target(axis, angle)
    found, best_any = _unconditional_candidates(params, target, tol, max_duration, max_pulses, harmonics)
    if not found:
        gate = _build_unconditional(params, best_any[2], best_any[3], target, axis, angle) if best_any else None
        raise SynthesisError(f"no unconditional {axis}({angle:.4g}) within {tol} and {max_duration} s", gate)
    _, _, n, t = found[0]
    return _build_unconditional(params, n, t, target, axis, angle)


def _unconditional_candidates(params, target, tol, max_duration, max_pulses, harmonics):
    """All refined (duration, infidelity, N, tau) within ``tol``, shortest first, and the overall best."""
    tq = q_from_matrix(target)
    wbar = mean_frequency(params)
    found = []
    best_any = None
    for m in range(2, 2 * harmonics + 1, 2):
        center = m * math.pi / (2 * wbar)
        taus = np.linspace(center * 0.98, center * 1.02, 801)
        for n in range(2, max_pulses + 1, 2):
            if 2 * n * taus[0] > max_duration:
                break
            qu, qd = decoupling_quaternions(params, taus, n)
            f = ((np.abs(_q_inner(tq, qu)) + np.abs(_q_inner(tq, qd))) / 2) ** 2
            f = np.where(2 * n * taus <= max_duration, f, 0.0)
            i = int(np.argmax(f))
            if f[i] < 1 - 20 * tol:
                continue

            def cost(t, n=n):
                qu1, qd1 = decoupling_quaternions(params, t, n)
                return 1 - ((abs(_q_inner(tq, qu1)) + abs(_q_inner(tq, qd1))) / 2) ** 2

            a, b = taus[max(i - 1, 0)], taus[min(i + 1, len(taus) - 1)]
            res = optimize.minimize_scalar(cost, bounds=(a, b), method="bounded", options={"xatol": 1e-16})
            t, inf = float(res.x), float(res.fun)
            if 2 * n * t > max_duration:
                continue
            cand = (2 * n * t, inf, n, t)
            if best_any is None or inf < best_any[1]:
                best_any = cand
            if inf <= tol:
                found.append(cand)
    found.sort(key=lambda c: (round(c[0], 12), c[1]))
    return found, best_any


def _build_unconditional(params, n, t, target, axis, angle) -> SynthesizedGate:
    qu, qd = decoupling_quaternions(params, t, n)
    raw = _controlled(q_to_matrix(qu), q_to_matrix(qd))
    inf, fr = _frames_for(target, target, qu, qd, False)
    achieved = apply_frames(raw, fr)
    tgt = np.kron(IDENTITY, target)
    seq = PulseSequence(tuple(decoupling_sequence(n, t)), "unconditional_rotation", f"{axis}({angle:.6g})")
    return SynthesizedGate(
        seq, achieved, f"{axis}({angle:.6g})", float(1 - process_fidelity(tgt, achieved)), tgt, n, t, raw, fr
    )


def echo_wait_quaternions(params: HyperfineParams, duration) -> tuple[np.ndarray, np.ndarray]:
    half = np.asarray(duration, dtype=float) / 2
    qu = q_mul(_q_free(params, -1, half), _q_free(params, 1, half))
    qd = q_mul(_q_free(params, 1, half), _q_free(params, -1, half))
    return qu, qd


def _z_rotation(params: HyperfineParams, axis: str, angle: float) -> SynthesizedGate:
    if angle % (2 * math.pi) == 0:
        ident = np.eye(4, dtype=complex)
        return SynthesizedGate(PulseSequence((), "identity", "identity"), ident, "identity", 0.0, ident, 0, 0.0, ident)
    theta = angle if axis == "z" else 2 * math.pi - angle
    target = np.kron(IDENTITY, rz(theta))
    t = theta / mean_frequency(params)
    qu, qd = echo_wait_quaternions(params, t)
    raw = _controlled(q_to_matrix(qu), q_to_matrix(qd))
    inf, fr = _frames_for(rz(theta), rz(theta), qu, qd, False)
    achieved = apply_frames(raw, fr)
    seq = PulseSequence(tuple(echo_wait(t)), "unconditional_rotation", f"{axis}({angle:.6g})")
    return SynthesizedGate(seq, achieved, f"{axis}({angle:.6g})", float(1 - process_fidelity(target, achieved)), target, 2, t / 2, raw, fr)


CNOT_DOWN = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def synthesize_cnot(
    params: HyperfineParams,
    cond_tol: float = 1e-3,
    uncond_tol: float = 5e-4,
    k: int = 0,
    n_candidates: int = 4,
) -> SynthesizedGate:
    """Electron-controlled X on the nucleus, flipping it for electron down.

    Sequence: conditional R_x(+-pi/2), an echoed wait (common nuclear Z),
    then an unconditional nuclear rotation by pi/2 about +-x. The tau values,
    the echoed-wait duration and the software Z frames are refined jointly
    against the ideal CNOT. The search is deterministic, so results are
    memoized per argument set; each call returns an independent copy.
    """
    return copy.deepcopy(_synthesize_cnot_cached(params, cond_tol, uncond_tol, k, n_candidates))


@lru_cache(maxsize=16)
def _synthesize_cnot_cached(params, cond_tol, uncond_tol, k, n_candidates) -> SynthesizedGate:
    cond = solve_conditional_rotation(params, k=k, tol=cond_tol)
    # CRx(+) has R_x(+pi/2) on up: follow with x(-pi/2) to leave up untouched
    sign = 1 if cond.target.startswith("CRx(+") else -1
    unc_axis = "-x" if sign > 0 else "x"
    # the echoed wait supplies a nuclear Z, so rotations about -x serve as well as +x
    cands = []
    for ax in (unc_axis, unc_axis.lstrip("-") if unc_axis.startswith("-") else "-" + unc_axis):
        found, _ = _unconditional_candidates(params, _unconditional_target(ax, math.pi / 2), uncond_tol, 200e-6, 400, 60)
        cands += [c + (ax,) for c in found]
    if not cands:
        raise SynthesisError(f"no unconditional x(pi/2) within {uncond_tol}")
    cands.sort(key=lambda c: (round(c[0], 12), c[1]))
    # a few of the shortest plus a few of the most accurate
    picks = cands[:n_candidates] + sorted(cands, key=lambda c: c[1])[:n_candidates]
    picks = list(dict.fromkeys((c[2], c[3], c[4]) for c in picks))
    period = TWO_PI / mean_frequency(params)
    nc = cond.n_pulses

    def pieces(x, nu):
        tc, tu, tm = x
        cu, cd = decoupling_quaternions(params, tc, nc)
        mu, md = echo_wait_quaternions(params, tm)
        uu, ud = decoupling_quaternions(params, tu, nu)
        return q_mul(uu, q_mul(mu, cu)), q_mul(ud, q_mul(md, cd))

    tu_q = q_from_matrix(IDENTITY)
    x_su2 = rx(math.pi)  # X up to a phase, inside SU(2)
    td_q = q_from_matrix(x_su2)

    def cost(x, nu):
        if x[2] < 0:
            return 1.0
        qu, qd = pieces(x, nu)
        # Z frames on both sides leave |(a, bz)| of the identity branch and
        # |(bx, by)| of the flip branch as the reachable overlaps
        f = (math.hypot(qu[0], qu[3]) + math.hypot(qd[1], qd[2])) / 2
        return 1.0 - f * f

    best = None
    for nu, tu0, ax in picks:
        starts = [
            (tc, tu0, tm)
            for tc in cond.tau + np.linspace(-1.5e-9, 1.5e-9, 7)
            for tm in np.linspace(0, period, 12, endpoint=False)
        ]
        s0 = min(starts, key=lambda s: cost(s, nu))
        res = optimize.minimize(
            cost,
            s0,
            args=(nu,),
            method="Nelder-Mead",
            options={"xatol": 1e-16, "fatol": 1e-16, "maxiter": 4000, "initial_simplex": _simplex(s0, period)},
        )
        if best is None or res.fun < best[0].fun:
            best = (res, nu, ax)
        if res.fun < 1e-7:
            break
    best, nu, unc_axis = best
    tc, tu, tm = (float(v) for v in best.x)
    tm = tm % period
    qu, qd = pieces((tc, tu, tm), nu)
    inf, b, c = fit_nuclear_frames(tu_q, td_q, qu, qd)
    mu = rz(b) @ q_to_matrix(qu) @ rz(c)
    md = rz(b) @ q_to_matrix(qd) @ rz(c)
    a = _electron_phase(IDENTITY, SIGMA_X, mu, md)
    frames = {"electron_z": a, "nuclear_pre_z": c, "nuclear_post_z": b}
    raw = _controlled(q_to_matrix(qu), q_to_matrix(qd))
    achieved = apply_frames(raw, frames)
    prims = decoupling_sequence(nc, tc) + (echo_wait(tm) if tm > 0 else []) + decoupling_sequence(nu, tu)
    seq = PulseSequence(tuple(prims), "cnot", "CNOT(control=down)")
    cond_final = conditional_rotation(params, nc, tc)
    unc_final = _build_unconditional(params, nu, tu, _unconditional_target(unc_axis, math.pi / 2), unc_axis, math.pi / 2)
    return SynthesizedGate(
        seq,
        achieved,
        "CNOT",
        float(1 - process_fidelity(CNOT_DOWN, achieved)),
        CNOT_DOWN,
        nc + nu,
        tc,
        raw,
        frames,
        (cond_final, unc_final),
    )


def _simplex(x0, period):
    x0 = np.asarray(x0, dtype=float)
    steps = np.array([0.5e-9, 0.5e-9, period / 20])
    simplex = [x0]
    for i in range(3):
        v = x0.copy()
        v[i] += steps[i]
        simplex.append(v)
    return np.array(simplex)


# Nuclear Ramsey

def ramsey_signal(params: HyperfineParams, electron, times, t2_star: float | None = None) -> np.ndarray:
    """<sigma_x> of a nucleus prepared along +x precessing with the electron frozen.

    Exact for the tilted precession axis; an optional exp(-t/T2*) envelope
    multiplies the signal.
    """
    t = np.asarray(times, dtype=float)
    q = _q_free(params, _sign(electron), t)
    a, bx, by, bz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    # rotate sigma_x: R^dag sx R for R = a - i b.sigma; x-component of rotated x axis
    sx_t = a**2 + bx**2 - by**2 - bz**2
    if t2_star is not None:
        sx_t = sx_t * np.exp(-t / t2_star)
    return sx_t


def extract_frequency(times, signal) -> float:
    """Angular frequency of a (possibly damped) cosine trace.

    FFT peak for the start value, then a least-squares fit of
    A cos(w t + phi) exp(-t/T) + c.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    dt = t[1] - t[0]
    spec = np.abs(np.fft.rfft(y - y.mean()))
    freqs = np.fft.rfftfreq(len(y), dt)
    f0 = freqs[1 + int(np.argmax(spec[1:]))]

    def model(tt, amp, w, phi, decay, off):
        return amp * np.cos(w * tt + phi) * np.exp(-tt * decay) + off

    p0 = [(y.max() - y.min()) / 2, TWO_PI * f0, 0.0, 0.0, y.mean()]
    popt, _ = optimize.curve_fit(model, t, y, p0=p0, maxfev=20000)
    return float(abs(popt[1]))


def nuclear_echo_signal(total_times, t2: float, stretch: float = 1.0) -> np.ndarray:
    """Nuclear spin-echo coherence exp(-(2T/T2)^p) versus total echo time 2T."""
    t = np.asarray(total_times, dtype=float)
    return np.exp(-((t / t2) ** stretch))
