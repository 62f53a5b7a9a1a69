"""Spin-dependent reflection from a single-sided cavity and spin readout.

The cavity has one waveguide port. Loss not going into the waveguide is
lumped into ``kappa - kappa_wg``, so critical coupling is ``kappa_wg = kappa/2``.
The spin-up optical transition couples to the cavity; spin-down is treated as
decoupled unless a finite ``zeeman_splitting`` is given, in which case it
couples with that extra detuning.

Readout is a photon-count threshold. While the spin is bright, every scattered
photon can flip the spin with probability ``flip_per_photon``; the flipping
photon is scattered out of the detected mode and the bright emission stops.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import optimize, stats

from .core import DensityMatrix, ordinary

SCAN_HALF_WIDTH = 3.0  # in units of kappa
SCAN_RESOLUTION = 2000  # points per kappa


@dataclass(frozen=True)
class CavityParams:
    """All rates are angular (rad/s) energy decay rates.

    ``delta`` is the cavity minus atom detuning; the atomic transition sits at
    ``atom_freq`` (usually 0, the frame origin).
    """

    g: float
    kappa: float
    kappa_wg: float
    gamma: float
    delta: float = 0.0
    atom_freq: float = 0.0
    zeeman_splitting: float | None = None

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("g must be non-negative")
        if self.kappa <= 0 or self.gamma <= 0 or self.kappa_wg <= 0:
            raise ValueError("kappa, kappa_wg and gamma must be positive")
        if self.kappa_wg > self.kappa * (1 + 1e-12):
            raise ValueError("kappa_wg must not exceed kappa")

    @property
    def cavity_freq(self) -> float:
        return self.atom_freq + self.delta

    @classmethod
    def from_ghz(cls, g, kappa, gamma, delta=0.0, kappa_wg=None, atom_freq=0.0, zeeman_splitting=None):
        """Build from ordinary frequencies in GHz; ``kappa_wg`` defaults to critical coupling."""
        w = 2 * np.pi * 1e9
        kwg = kappa / 2 if kappa_wg is None else kappa_wg
        zs = None if zeeman_splitting is None else zeeman_splitting * w
        return cls(g * w, kappa * w, kwg * w, gamma * w, delta * w, atom_freq * w, zs)


@dataclass(frozen=True)
class FieldConfig:
    """Bias field metadata; does not enter the reflection model."""

    B_ext: float = 0.19
    alpha: float = np.pi / 2
    f_updown: float = 2 * np.pi * 6.7e9

    def __post_init__(self):
        if self.B_ext < 0:
            raise ValueError("B_ext must be >= 0")
        if not 0 <= self.alpha <= np.pi:
            raise ValueError("alpha must lie in [0, pi]")


@dataclass(frozen=True)
class ReadoutModel:
    mean_photons_bright: float = 10.0
    dark_rate: float = 0.02
    flip_per_photon: float = 0.0
    threshold: int = 1
    duration: float = 13e-6

    def __post_init__(self):
        if self.mean_photons_bright < 0 or self.dark_rate < 0:
            raise ValueError("photon means must be non-negative")
        if not 0 <= self.flip_per_photon <= 1:
            raise ValueError("flip_per_photon must lie in [0, 1]")
        if int(self.threshold) != self.threshold or self.threshold < 1:
            raise ValueError("threshold must be an integer >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @classmethod
    def ideal(cls) -> "ReadoutModel":
        """No dark counts and a bright mean whose zero-count chance underflows 1 - p."""
        return cls(mean_photons_bright=50.0, dark_rate=0.0)


def cooperativity(params: CavityParams) -> float:
    return 4 * params.g**2 / (params.kappa * params.gamma)


def reflection_amplitude(params: CavityParams, probe, spin_coupled: bool = True):
    """Complex reflection coefficient at angular probe frequency (scalar or array)."""
    w = np.asarray(probe, dtype=float)
    denom = 1j * (params.cavity_freq - w) + params.kappa / 2
    if spin_coupled:
        denom = denom + params.g**2 / (1j * (params.atom_freq - w) + params.gamma / 2)
    elif params.zeeman_splitting is not None:
        wa = params.atom_freq + params.zeeman_splitting
        denom = denom + params.g**2 / (1j * (wa - w) + params.gamma / 2)
    r = np.asarray(1 - params.kappa_wg / denom)
    return r if r.ndim else complex(r)


def spin_reflections(params: CavityParams, probe: float) -> tuple[complex, complex]:
    """(r_up, r_down) at one probe frequency; spin up is the cavity-coupled state."""
    return reflection_amplitude(params, probe, True), reflection_amplitude(params, probe, False)


def scan_grid(params: CavityParams, half_width: float = SCAN_HALF_WIDTH, resolution: int = SCAN_RESOLUTION):
    n = int(round(2 * half_width * resolution)) + 1
    wc = params.cavity_freq
    return np.linspace(wc - half_width * params.kappa, wc + half_width * params.kappa, n)


def reflection_spectrum(params: CavityParams, probes=None):
    """(probes, R_up, R_down, contrast) arrays."""
    w = scan_grid(params) if probes is None else np.asarray(probes, dtype=float)
    ru = np.abs(reflection_amplitude(params, w, True)) ** 2
    rd = np.abs(reflection_amplitude(params, w, False)) ** 2
    return w, ru, rd, ru - rd


def find_contrast_frequency(params: CavityParams) -> tuple[float, float]:
    """Probe frequency of maximum spin contrast on the fixed scan grid.

    Ties resolve to the lowest frequency.
    """
    w, _, _, contrast = reflection_spectrum(params)
    i = int(np.argmax(contrast))
    return float(w[i]), float(contrast[i])


def spectrum_csv(params: CavityParams) -> str:
    w, ru, rd, c = reflection_spectrum(params)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["probe_detuning_GHz", "R_up", "R_down", "contrast"])
    det = ordinary(w - params.atom_freq) / 1e9
    for row in zip(det, ru, rd, c):
        wr.writerow([f"{x:.9g}" for x in row])
    return buf.getvalue()


def spectrum_sidecar(params: CavityParams) -> str:
    fq, contrast = find_contrast_frequency(params)
    payload = {
        "params": {k: (None if v is None else float(f"{v:.9g}")) for k, v in asdict(params).items()},
        "units": "rad/s",
        "cooperativity": float(f"{cooperativity(params):.9g}"),
        "f_Q_detuning_GHz": float(f"{ordinary(fq - params.atom_freq) / 1e9:.9g}"),
        "max_contrast": float(f"{contrast:.9g}"),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# Readout

def _spin_label(spin) -> str:
    if isinstance(spin, str):
        s = spin.lower()
        if s in ("up", "u", "↑", "1"):
            return "up"
        if s in ("down", "d", "↓", "0"):
            return "down"
        raise ValueError(f"unknown spin label {spin!r}")
    raise TypeError("spin must be a label; sample DensityMatrix states with simulate_readout")


def bright_count_pmf(model: ReadoutModel, tol: float = 1e-13) -> np.ndarray:
    """Distribution of detected bright photons for a spin-up start.

    Sums over the position of the first flipping photon: n photons are
    detected if the first n scatterings do not flip and either emission ends
    there or the next one flips.
    """
    mu = model.mean_photons_bright
    q = model.flip_per_photon
    nmax = int(stats.poisson.isf(tol, mu)) + 2 if mu > 0 else 1
    n = np.arange(nmax + 1)
    pois = stats.poisson.pmf(n, mu)
    tail = stats.poisson.sf(n, mu)  # P(N > n)
    keep = (1 - q) ** n
    return pois * keep + tail * keep * q


def _count_pmf(model: ReadoutModel, spin: str) -> np.ndarray:
    dark = model.dark_rate
    dmax = int(stats.poisson.isf(1e-13, dark)) + 2 if dark > 0 else 1
    pd = stats.poisson.pmf(np.arange(dmax + 1), dark)
    if spin == "down":
        return pd
    return np.convolve(bright_count_pmf(model), pd)


def declare_up_probability(model: ReadoutModel, spin) -> float:
    pmf = _count_pmf(model, _spin_label(spin))
    return float(np.clip(1.0 - pmf[: model.threshold].sum(), 0.0, 1.0))


def readout_confusion_matrix(model: ReadoutModel) -> np.ndarray:
    """C[i, j] = P(declare i | prepared j), index 0 = up, 1 = down."""
    pu = declare_up_probability(model, "up")
    pd = declare_up_probability(model, "down")
    return np.array([[pu, pd], [1 - pu, 1 - pd]])


def readout_fidelity(model: ReadoutModel) -> float:
    c = readout_confusion_matrix(model)
    return float((c[0, 0] + c[1, 1]) / 2)


def _draw_counts(model: ReadoutModel, spin_up: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = spin_up.shape[0]
    bright = rng.poisson(model.mean_photons_bright, size=n)
    q = model.flip_per_photon
    if q > 0:
        first_flip = rng.geometric(q, size=n)
        bright = np.minimum(bright, first_flip - 1)
    dark = rng.poisson(model.dark_rate, size=n)
    return np.where(spin_up, bright, 0) + dark


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; seeds may be ints or SeedSequence objects."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def simulate_readout(model: ReadoutModel, spin, seed) -> tuple[str, int]:
    """One readout shot; returns ('up' | 'down', detected counts).

    ``spin`` is a label or a single-qubit DensityMatrix, in which case the
    prepared spin is sampled from its populations.
    """
    rng = make_rng(seed)
    if isinstance(spin, DensityMatrix):
        p_up = float(np.real(spin.matrix[0, 0]))
        up = rng.random() < p_up
    else:
        up = _spin_label(spin) == "up"
    counts = int(_draw_counts(model, np.array([up]), rng)[0])
    return ("up" if counts >= model.threshold else "down"), counts


def simulate_readout_shots(model: ReadoutModel, spin, shots: int, seed) -> np.ndarray:
    """Vectorized shots for a fixed prepared spin; returns the count array."""
    rng = make_rng(seed)
    up = np.full(shots, _spin_label(spin) == "up")
    return _draw_counts(model, up, rng)


def monte_carlo_confusion(model: ReadoutModel, shots: int, seed) -> np.ndarray:
    s_up, s_down = np.random.SeedSequence(seed).spawn(2)
    pu = np.mean(simulate_readout_shots(model, "up", shots, s_up) >= model.threshold)
    pd = np.mean(simulate_readout_shots(model, "down", shots, s_down) >= model.threshold)
    return np.array([[pu, pd], [1 - pu, 1 - pd]])


def calibrate_flip_probability(model: ReadoutModel, target_fidelity: float) -> ReadoutModel:
    """Solve for flip_per_photon giving the requested mean readout fidelity."""
    def f(q):
        return readout_fidelity(replace(model, flip_per_photon=q)) - target_fidelity

    lo, hi = f(0.0), f(1.0)
    if lo < 0 or hi > 0:
        raise ValueError(
            f"target fidelity {target_fidelity} outside reachable range [{hi + target_fidelity:.6g}, "
            f"{lo + target_fidelity:.6g}]"
        )
    q = optimize.brentq(f, 0.0, 1.0, xtol=1e-14)
    return replace(model, flip_per_photon=float(q))


def calibrate_flip_monte_carlo(
    model: ReadoutModel, target_fidelity: float, shots: int = 100_000, seed=0, grid=None
) -> float:
    """Monte-Carlo sweep over flip_per_photon with common random numbers.

    Returns the linearly interpolated crossing of the simulated mean fidelity
    with the target.
    """
    grid = np.linspace(0.0, 0.5, 51) if grid is None else np.asarray(grid)
    s_up, s_down = np.random.SeedSequence(seed).spawn(2)
    r_up, r_down = make_rng(s_up), make_rng(s_down)
    n = r_up.poisson(model.mean_photons_bright, size=shots)
    u = r_up.random(shots)
    d_up = r_up.poisson(model.dark_rate, size=shots)
    p_dd = np.mean(r_down.poisson(model.dark_rate, size=shots) < model.threshold)
    fids = []
    for q in grid:
        if q > 0:
            # inverse-CDF geometric draw from the shared uniforms
            first = np.floor(np.log1p(-u) / np.log1p(-q)) + 1 if q < 1 else np.ones(shots)
            b = np.minimum(n, first - 1)
        else:
            b = n
        p_uu = np.mean(b + d_up >= model.threshold)
        fids.append((p_uu + p_dd) / 2)
    fids = np.asarray(fids)
    below = np.nonzero(fids <= target_fidelity)[0]
    if below.size == 0 or below[0] == 0:
        raise ValueError("target fidelity not bracketed by the sweep grid")
    j = below[0]
    q0, q1, f0, f1 = grid[j - 1], grid[j], fids[j - 1], fids[j]
    return float(q0 + (target_fidelity - f0) * (q1 - q0) / (f1 - f0))
