"""Pulse-level evolution of an electron (x) nuclei register with envelope noise.

The electron is subsystem 0, followed by one qubit per nucleus. Microwave
rotations act on the electron; waits evolve every nucleus under the
Hamiltonian selected by the electron's z state. Noise is phenomenological:

* electron dephasing multiplies electron coherences by the ratio of the
  decay envelope at the end and start of each step, so the accumulated
  factor is exp(-(t/T2(N))^p) however the time is sliced;
* nuclear dephasing is Markovian with time constant ``nuclear_T2_star``;
* electron T1 is amplitude damping toward spin down.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cavity import ReadoutModel, calibrate_flip_probability
from .core import IDENTITY, TWO_PI, DensityMatrix, QuantumError, rotation
from .hyperfine import HyperfineParams, free_evolution
from .sequence import MWRotation, OpticalPump, PulseSequence, Readout, SequenceError, Wait, XY8Block

T2_AT_16 = 603e-6
DEFAULT_EXPONENT = 2 / 3


@lru_cache(maxsize=1)
def default_readout() -> ReadoutModel:
    """Threshold readout with ~10 photons calibrated to 0.92 mean fidelity."""
    return calibrate_flip_probability(ReadoutModel(mean_photons_bright=10.0, dark_rate=0.02), 0.92)


@dataclass(frozen=True)
class NoiseModel:
    electron_T2_1: float = T2_AT_16 / 16**DEFAULT_EXPONENT
    scaling_exponent: float = DEFAULT_EXPONENT
    stretch_p: float = 1.0
    electron_T1: float = math.inf
    nuclear_T2_star: float = 2e-3
    nuclear_T2: float = 0.2
    mw_rabi: float = TWO_PI * 80e6
    readout: ReadoutModel = field(default_factory=default_readout)

    def __post_init__(self):
        for name in ("electron_T2_1", "electron_T1", "nuclear_T2_star", "nuclear_T2", "mw_rabi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.stretch_p > 0:
            raise ValueError("stretch_p must be positive")
        if not self.scaling_exponent >= 0:
            raise ValueError("scaling_exponent must be non-negative")

    @classmethod
    def anchored(cls, t2: float, n_pulses: int, exponent: float = DEFAULT_EXPONENT, **kw) -> "NoiseModel":
        """Model whose T2 at ``n_pulses`` equals ``t2``."""
        return cls(electron_T2_1=t2 / n_pulses**exponent, scaling_exponent=exponent, **kw)

    def replace(self, **kw) -> "NoiseModel":
        return dataclasses.replace(self, **kw)

    def dephasing_only(self) -> "NoiseModel":
        """Electron dephasing only: no T1, no nuclear decay, ideal readout."""
        return self.replace(
            electron_T1=math.inf,
            nuclear_T2_star=math.inf,
            nuclear_T2=math.inf,
            readout=ReadoutModel.ideal(),
        )


def coherence_time(noise: NoiseModel, n_pulses: int) -> float:
    if n_pulses < 1:
        raise ValueError("pulse count must be >= 1")
    return noise.electron_T2_1 * n_pulses**noise.scaling_exponent


def decay_envelope(noise: NoiseModel, n_pulses: int, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    w = np.exp(-((t / coherence_time(noise, n_pulses)) ** noise.stretch_p))
    return float(w) if w.ndim == 0 else w


class _Register:
    """Mutable working copy of the register during one simulation."""

    def __init__(self, rho: np.ndarray, nuclei, noise, n_decoupling: int):
        self.rho = np.array(rho, dtype=complex)
        self.nuclei = list(nuclei)
        self.n = len(self.nuclei)
        self.dim = 2 ** (self.n + 1)
        self.half = self.dim // 2
        self.noise = noise
        self.n_decoupling = max(1, n_decoupling)
        self.clock = 0.0  # electron coherence clock, reset by optical pumping
        self._wait_cache = {}
        bits = np.arange(self.dim)
        self._nuc_masks = []
        for j in range(self.n):
            b = (bits >> (self.n - 1 - j)) & 1
            self._nuc_masks.append(b[:, None] != b[None, :])

    def unitary(self, u: np.ndarray):
        self.rho = u @ self.rho @ u.conj().T

    def electron_unitary(self, u2: np.ndarray):
        self.unitary(np.kron(u2, np.eye(self.half)))

    def _conditional(self, t: float) -> np.ndarray:
        u = self._wait_cache.get(t)
        if u is None:
            up = np.array([[1.0]], dtype=complex)
            down = np.array([[1.0]], dtype=complex)
            for p in self.nuclei:
                up = np.kron(up, free_evolution(p, "up", t))
                down = np.kron(down, free_evolution(p, "down", t))
            u = np.zeros((self.dim, self.dim), dtype=complex)
            u[: self.half, : self.half] = up
            u[self.half :, self.half :] = down
            self._wait_cache[t] = u
        return u

    def _averaged(self, t: float) -> np.ndarray:
        """Nuclear evolution under the electron-averaged Hamiltonian (bare Larmor)."""
        m = np.array([[1.0]], dtype=complex)
        for p in self.nuclei:
            m = np.kron(m, rotation((0, 0, 1), p.omega_l * t))
        return np.kron(IDENTITY, m)

    def decohere(self, dt: float):
        if dt <= 0 or self.noise is None:
            return
        nz = self.noise
        t0, t1 = self.clock, self.clock + dt
        self.clock = t1
        t2 = coherence_time(nz, self.n_decoupling)
        w = math.exp((t0 / t2) ** nz.stretch_p - (t1 / t2) ** nz.stretch_p)
        h = self.half
        self.rho[:h, h:] *= w
        self.rho[h:, :h] *= w
        for mask in self._nuc_masks:
            wn = math.exp(-dt / nz.nuclear_T2_star)
            self.rho = np.where(mask, self.rho * wn, self.rho)
        if math.isfinite(nz.electron_T1):
            g = 1.0 - math.exp(-dt / nz.electron_T1)
            k0 = np.kron(np.array([[math.sqrt(1 - g), 0], [0, 1]]), np.eye(h))
            k1 = np.kron(np.array([[0, 0], [math.sqrt(g), 0]]), np.eye(h))
            self.rho = k0 @ self.rho @ k0.T + k1 @ self.rho @ k1.T

    def wait(self, t: float, max_step: float | None):
        if t == 0:
            return
        pieces = 1 if not max_step else max(1, math.ceil(t / max_step - 1e-12))
        dt = t / pieces
        u = self._conditional(dt)
        # symmetric splitting: noise for half a step on either side of the unitary
        for _ in range(pieces):
            self.decohere(dt / 2)
            self.unitary(u)
            self.decohere(dt / 2)

    def pulse(self, p: MWRotation, finite: bool):
        u2 = rotation((math.cos(p.phase), math.sin(p.phase), 0.0), p.angle)
        if not finite:
            self.electron_unitary(u2)
            return
        dur = abs(p.angle) / self.noise_rabi()
        half = self._averaged(dur / 2)
        self.unitary(half)
        self.electron_unitary(u2)
        self.unitary(half)
        self.decohere(dur)

    def noise_rabi(self) -> float:
        return (self.noise or NoiseModel()).mw_rabi

    def pump(self, p: OpticalPump):
        h = self.half
        nuc = self.rho[:h, :h] + self.rho[h:, h:]
        e = np.diag([1 - p.error, p.error] if p.target == "up" else [p.error, 1 - p.error]).astype(complex)
        self.rho = np.kron(e, nuc)
        self.clock = 0.0

    def readout(self):
        h = self.half
        self.rho[:h, h:] = 0
        self.rho[h:, :h] = 0


def simulate_sequence(
    seq: PulseSequence,
    initial: DensityMatrix,
    nuclei=(),
    noise: NoiseModel | None = None,
    finite_pulses: bool = False,
    max_step: float | None = None,
    n_decoupling: int | None = None,
) -> DensityMatrix:
    """Apply ``seq`` left to right to ``initial``; the electron is subsystem 0.

    With ``noise`` set, T2 uses the sequence's pi-pulse count (or
    ``n_decoupling``), floored at 1. ``max_step`` slices waits so that noise
    is interleaved more finely. Evolution is deterministic: stochastic
    effects enter as channels on the ensemble state.
    """
    if isinstance(nuclei, HyperfineParams):
        nuclei = [nuclei]
    nuclei = list(nuclei)
    expected = (2,) * (len(nuclei) + 1)
    if tuple(initial.dims) != expected:
        raise QuantumError(f"initial state dims {initial.dims} do not match register dims {expected}")
    if finite_pulses and noise is None:
        raise ValueError("finite pulses need a NoiseModel for the Rabi frequency")
    n_dd = seq.n_pi_pulses if n_decoupling is None else n_decoupling
    reg = _Register(initial.matrix, nuclei, noise, n_dd)
    for p in seq.expanded():
        if isinstance(p, Wait):
            reg.wait(p.duration, max_step)
        elif isinstance(p, MWRotation):
            reg.pulse(p, finite_pulses)
        elif isinstance(p, OpticalPump):
            reg.pump(p)
        elif isinstance(p, Readout):
            reg.readout()
        elif isinstance(p, XY8Block):  # pragma: no cover - expanded() flattens these
            raise SequenceError("unexpanded XY8 block")
        else:
            raise SequenceError(f"unknown primitive {p!r}")
    m = reg.rho
    return DensityMatrix(initial.space, (m + m.conj().T) / 2)


def rabi_trace(noise: NoiseModel, durations, damped: bool = False) -> np.ndarray:
    """P(down) after resonant driving from spin up for each duration.

    ``damped`` shrinks the fringe contrast with the single-pulse decay envelope.
    """
    t = np.asarray(durations, dtype=float)
    if np.any(t < 0):
        raise ValueError("durations must be >= 0")
    c = np.cos(noise.mw_rabi * t)
    if damped:
        c = c * decay_envelope(noise, 1, t)
    return (1 - c) / 2


def traces_csv(times, signal) -> str:
    """CSV with columns time_us, signal and 9 significant digits."""
    lines = ["time_us,signal"]
    for t, s in zip(np.asarray(times, dtype=float), np.asarray(signal, dtype=float)):
        lines.append(f"{t * 1e6:.9g},{s:.9g}")
    return "\n".join(lines) + "\n"
