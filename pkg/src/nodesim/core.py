"""Dense state and operator algebra for small composite registers.

Basis conventions are fixed everywhere in the package: spin ``|up> = (1, 0)``
and ``|down> = (0, 1)``; the time-bin photonic mode is ordered
``(|e>, |l>, |vac>)``. Tensor products put the left operand on the most
significant index, so subsystem 0 is the leftmost factor.

All frequencies handled by the package are angular (rad/s) with hbar = 1.
Conversion from ordinary frequency happens only at I/O boundaries through
:func:`angular`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-9
UNITARY_TOL = 1e-10
KRAUS_TOL = 1e-8
EIG_CLIP_TOL = 1e-10


class QuantumError(ValueError):
    """Raised for malformed states, operators or subsystem selections."""


def angular(freq_hz: float) -> float:
    """Ordinary frequency in Hz to angular frequency in rad/s."""
    return TWO_PI * freq_hz


def ordinary(omega: float) -> float:
    """Angular frequency in rad/s to ordinary frequency in Hz."""
    return omega / TWO_PI


# Operator constants
IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# raising takes |down> to |up>
RAISING = np.array([[0, 1], [0, 0]], dtype=complex)
LOWERING = RAISING.conj().T

OPERATORS = {
    "sx": SIGMA_X,
    "sy": SIGMA_Y,
    "sz": SIGMA_Z,
    "identity": IDENTITY,
    "raising": RAISING,
    "lowering": LOWERING,
}
PAULIS = {"I": IDENTITY, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}

UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)
for _m in OPERATORS.values():
    _m.setflags(write=False)
for _v in (UP, DOWN):
    _v.setflags(write=False)


@dataclass(frozen=True)
class HilbertSpace:
    subsystem_dims: tuple[int, ...]

    def __init__(self, subsystem_dims: Iterable[int]):
        dims = tuple(int(d) for d in subsystem_dims)
        if not dims:
            raise QuantumError("HilbertSpace needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise QuantumError(f"every subsystem dimension must be >= 2, got {dims}")
        object.__setattr__(self, "subsystem_dims", dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.subsystem_dims))

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystem_dims)

    def __mul__(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.subsystem_dims + other.subsystem_dims)

    def check_indices(self, indices: Iterable[int]) -> tuple[int, ...]:
        idx = tuple(int(i) for i in indices)
        if not idx:
            raise QuantumError("subsystem index set must be non-empty")
        if len(set(idx)) != len(idx):
            raise QuantumError(f"repeated subsystem index in {idx}")
        for i in idx:
            if not 0 <= i < self.n_subsystems:
                raise QuantumError(
                    f"subsystem index {i} out of range for {self.n_subsystems} subsystems"
                )
        return idx


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Trace-one positive operator on a composite space; immutable."""

    space: HilbertSpace
    matrix: np.ndarray

    def __init__(self, space: HilbertSpace | Sequence[int], matrix, *, validate: bool = True):
        if not isinstance(space, HilbertSpace):
            space = HilbertSpace(space)
        m = np.array(matrix, dtype=complex)
        if m.shape != (space.dim, space.dim):
            raise QuantumError(f"matrix shape {m.shape} does not match space dimension {space.dim}")
        if validate:
            _validate_density(m)
        m.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_ket(cls, space: HilbertSpace | Sequence[int], ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).reshape(-1)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise QuantumError("cannot build a state from the zero vector")
        v = v / norm
        return cls(space, np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, space: HilbertSpace | Sequence[int]) -> "DensityMatrix":
        if not isinstance(space, HilbertSpace):
            space = HilbertSpace(space)
        return cls(space, np.eye(space.dim) / space.dim)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.space.subsystem_dims

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def expect(self, op: np.ndarray) -> float:
        return float(np.real(np.trace(self.matrix @ op)))

    def __repr__(self) -> str:
        return f"DensityMatrix(dims={self.dims}, purity={self.purity():.6g})"


def _validate_density(m: np.ndarray) -> None:
    if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
        raise QuantumError("density matrix is not Hermitian")
    tr = np.trace(m).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise QuantumError(f"density matrix trace is {tr!r}, expected 1")
    if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < -POSITIVITY_TOL:
        raise QuantumError("density matrix has negative eigenvalues")


def ket(*labels: str) -> np.ndarray:
    """Product ket from labels: 'u'/'d' for spins, 'e'/'l'/'v' for the photon mode."""
    table = {
        "u": UP,
        "d": DOWN,
        "e": np.array([1, 0, 0], dtype=complex),
        "l": np.array([0, 1, 0], dtype=complex),
        "v": np.array([0, 0, 1], dtype=complex),
        "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
        "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    }
    return reduce(np.kron, [table[s] for s in labels])


def tensor(*ops):
    """Kronecker product, left operand most significant.

    DensityMatrix operands produce a DensityMatrix on the joined space; plain
    arrays produce arrays.
    """
    if not ops:
        raise QuantumError("tensor needs at least one operand")
    if all(isinstance(o, DensityMatrix) for o in ops):
        space = reduce(lambda a, b: a * b, (o.space for o in ops))
        return DensityMatrix(space, reduce(np.kron, (o.matrix for o in ops)), validate=False)
    if any(isinstance(o, DensityMatrix) for o in ops):
        raise QuantumError("cannot mix DensityMatrix and raw arrays in tensor")
    return reduce(np.kron, (np.asarray(o, dtype=complex) for o in ops))


def embed(op: np.ndarray, dims: Sequence[int], targets: Sequence[int]) -> np.ndarray:
    """Lift an operator acting on ``targets`` (in the given order) to the full space."""
    dims = tuple(dims)
    targets = tuple(targets)
    n = len(dims)
    tdims = [dims[t] for t in targets]
    dt = int(np.prod(tdims))
    op = np.asarray(op, dtype=complex)
    if op.shape != (dt, dt):
        raise QuantumError(f"operator shape {op.shape} does not match target dims {tdims}")
    rest = [i for i in range(n) if i not in targets]
    dr = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(dr))
    # full acts on order (targets..., rest...); permute back to natural order
    order = list(targets) + rest
    shape = [dims[i] for i in order]
    full = full.reshape(shape + shape)
    inv = np.argsort(order)
    full = full.transpose(list(inv) + [n + i for i in inv])
    d = int(np.prod(dims))
    return full.reshape(d, d)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    keep = tuple(sorted(rho.space.check_indices(keep)))
    dims = rho.dims
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace the highest index first so positions below stay valid
    cur = n
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + cur)
        cur -= 1
    dk = int(np.prod([dims[i] for i in keep]))
    return DensityMatrix([dims[i] for i in keep], t.reshape(dk, dk), validate=False)


def fidelity_pure(rho: DensityMatrix, psi) -> float:
    """Overlap <psi|rho|psi> against a normalized pure target."""
    v = np.asarray(psi, dtype=complex).reshape(-1)
    if v.shape[0] != rho.space.dim:
        raise QuantumError(f"target dimension {v.shape[0]} != state dimension {rho.space.dim}")
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-8:
        raise QuantumError(f"target state is not normalized (norm {norm})")
    f = float(np.real(v.conj() @ rho.matrix @ v))
    return min(max(f, 0.0), 1.0)


_YY = np.kron(SIGMA_Y, SIGMA_Y)


def concurrence(rho: DensityMatrix) -> float:
    """Wootters concurrence of a two-qubit state."""
    if rho.dims != (2, 2):
        raise QuantumError(f"concurrence needs a [2, 2] state, got {list(rho.dims)}")
    m = rho.matrix
    rt = _YY @ m.conj() @ _YY
    ev = np.linalg.eigvals(m @ rt).real
    ev = np.where(ev < EIG_CLIP_TOL, 0.0, ev)
    lam = np.sort(np.sqrt(ev))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    return u.shape[0] == u.shape[1] and np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol


def apply_unitary(rho: DensityMatrix, u: np.ndarray, targets: Sequence[int] | None = None) -> DensityMatrix:
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u):
        raise QuantumError("operator is not unitary")
    if targets is None:
        full = u
    else:
        full = embed(u, rho.dims, rho.space.check_indices(targets))
    if full.shape[0] != rho.space.dim:
        raise QuantumError("unitary dimension does not match the state")
    out = full @ rho.matrix @ full.conj().T
    return DensityMatrix(rho.space, (out + out.conj().T) / 2, validate=False)


def apply_kraus(
    rho: DensityMatrix, kraus: Sequence[np.ndarray], targets: Sequence[int] | None = None
) -> DensityMatrix:
    ks = [np.asarray(k, dtype=complex) for k in kraus]
    if not ks:
        raise QuantumError("empty Kraus set")
    s = sum(k.conj().T @ k for k in ks)
    if np.max(np.abs(s - np.eye(s.shape[0]))) > KRAUS_TOL:
        raise QuantumError("Kraus set is not trace preserving")
    if targets is not None:
        idx = rho.space.check_indices(targets)
        ks = [embed(k, rho.dims, idx) for k in ks]
    if ks[0].shape[0] != rho.space.dim:
        raise QuantumError("Kraus operator dimension does not match the state")
    out = sum(k @ rho.matrix @ k.conj().T for k in ks)
    return DensityMatrix(rho.space, (out + out.conj().T) / 2, validate=False)


@dataclass(frozen=True)
class Outcome:
    probability: float
    state: DensityMatrix | None  # None flags a zero-probability branch


ZERO_PROB = 1e-14


def measure(
    rho: DensityMatrix, projectors: Sequence[np.ndarray], targets: Sequence[int] | None = None
) -> list[Outcome]:
    """Born-rule measurement with a complete orthogonal projector set."""
    ps = [np.asarray(p, dtype=complex) for p in projectors]
    if not ps:
        raise QuantumError("empty projector set")
    d = ps[0].shape[0]
    if np.max(np.abs(sum(ps) - np.eye(d))) > 1e-9:
        raise QuantumError("projector set is not complete")
    for i, p in enumerate(ps):
        if np.max(np.abs(p @ p - p)) > 1e-9:
            raise QuantumError(f"operator {i} is not a projector")
    if targets is not None:
        idx = rho.space.check_indices(targets)
        ps = [embed(p, rho.dims, idx) for p in ps]
    out = []
    for p in ps:
        m = p @ rho.matrix @ p
        prob = float(np.real(np.trace(m)))
        if prob <= ZERO_PROB:
            out.append(Outcome(max(prob, 0.0), None))
        else:
            m = m / prob
            out.append(Outcome(prob, DensityMatrix(rho.space, (m + m.conj().T) / 2, validate=False)))
    return out


def basis_projectors(basis: str) -> list[np.ndarray]:
    """Single-qubit projectors, +1 eigenvector first."""
    if basis == "Z":
        vecs = [UP, DOWN]
    elif basis == "X":
        vecs = [np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2)]
    elif basis == "Y":
        vecs = [np.array([1, 1j]) / np.sqrt(2), np.array([1, -1j]) / np.sqrt(2)]
    else:
        raise QuantumError(f"unknown basis {basis!r}")
    return [np.outer(v, np.conj(v)).astype(complex) for v in vecs]


# Gates and channels

def rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """SU(2) rotation exp(-i angle n.sigma / 2) about a (normalized) axis."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    gen = n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z
    return np.cos(angle / 2) * IDENTITY - 1j * np.sin(angle / 2) * gen


def rx(angle: float) -> np.ndarray:
    return rotation((1, 0, 0), angle)


def ry(angle: float) -> np.ndarray:
    return rotation((0, 1, 0), angle)


def rz(angle: float) -> np.ndarray:
    return rotation((0, 0, 1), angle)


def axis_angle(u: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle in [0, 2pi] of a 2x2 unitary, global phase removed."""
    u = np.asarray(u, dtype=complex)
    u = u / np.sqrt(np.linalg.det(u))
    a = np.real(np.trace(u)) / 2
    b = np.array(
        [
            -np.imag(u[0, 1] + u[1, 0]) / 2,
            np.real(u[1, 0] - u[0, 1]) / 2,
            -np.imag(u[0, 0] - u[1, 1]) / 2,
        ]
    )
    s = np.linalg.norm(b)
    angle = 2 * np.arctan2(s, a)
    if s < 1e-15:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return b / s, float(angle)


def dephasing_kraus(coherence_factor: float) -> list[np.ndarray]:
    """Phase-damping channel multiplying qubit off-diagonals by ``coherence_factor``."""
    lam = float(np.clip(coherence_factor, -1.0, 1.0))
    return [np.sqrt((1 + lam) / 2) * IDENTITY, np.sqrt((1 - lam) / 2) * SIGMA_Z]


def depolarizing_kraus(p: float, dim: int = 2) -> list[np.ndarray]:
    """Replace the state with the maximally mixed one with probability ``p``."""
    if not 0 <= p <= 1:
        raise QuantumError("depolarizing probability must lie in [0, 1]")
    ks = [np.sqrt(1 - p) * np.eye(dim, dtype=complex)]
    for i in range(dim):
        for j in range(dim):
            e = np.zeros((dim, dim), dtype=complex)
            e[i, j] = 1.0
            ks.append(np.sqrt(p / dim) * e)
    return ks


def amplitude_damping_kraus(gamma: float) -> list[np.ndarray]:
    """Relaxation |up> -> |down> with probability ``gamma``."""
    g = float(np.clip(gamma, 0.0, 1.0))
    k0 = np.array([[np.sqrt(1 - g), 0], [0, 1]], dtype=complex)
    k1 = np.array([[0, 0], [np.sqrt(g), 0]], dtype=complex)
    return [k0, k1]


# Named states

def bell_state(name: str = "psi+") -> np.ndarray:
    table = {
        "phi+": (ket("u", "u") + ket("d", "d")) / np.sqrt(2),
        "phi-": (ket("u", "u") - ket("d", "d")) / np.sqrt(2),
        "psi+": (ket("u", "d") + ket("d", "u")) / np.sqrt(2),
        "psi-": (ket("u", "d") - ket("d", "u")) / np.sqrt(2),
    }
    return table[name]


def werner_state(p: float, bell: str = "psi+") -> DensityMatrix:
    """p |Bell><Bell| + (1 - p) I/4."""
    b = bell_state(bell)
    return DensityMatrix([2, 2], p * np.outer(b, b.conj()) + (1 - p) * np.eye(4) / 4)


def werner_p_for_fidelity(fidelity: float) -> float:
    return (4 * fidelity - 1) / 3


def process_fidelity(target: np.ndarray, achieved: np.ndarray) -> float:
    """|Tr(U_t^dag U)|^2 / d^2, global phase insensitive."""
    d = target.shape[0]
    return float(abs(np.trace(target.conj().T @ achieved)) ** 2 / d**2)


def project_to_physical(m: np.ndarray) -> np.ndarray:
    """Closest density matrix in 2-norm to a Hermitian unit-trace estimate.

    Eigenvalue projection onto the probability simplex (Smolin, Gambetta and
    Smith); this is the maximum-likelihood state under Gaussian noise.
    """
    h = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(h)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    d = len(w)
    lam = np.zeros(d)
    acc = 0.0
    i = d - 1
    wv = w.copy()
    while i >= 0 and wv[i] + acc / (i + 1) < 0:
        acc += wv[i]
        i -= 1
    for j in range(i + 1):
        lam[j] = wv[j] + acc / (i + 1)
    out = (v * lam) @ v.conj().T
    return (out + out.conj().T) / 2
