"""Dense operator algebra for small qubit registers.

Qubit ordering is fixed throughout the package: the electron is subsystem 0
and nuclear spins follow in register order. Basis index ``i`` of an n-qubit
operator corresponds to the bit string of ``i`` with subsystem 0 as the most
significant bit, i.e. the ordering produced by ``np.kron(q0, q1, ...)``.
"""

from __future__ import annotations

from functools import reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10

PAULI_LABELS = ("I", "X", "Y", "Z")

_PAULI = {
    "I": np.array([[1, 0], [0, 1]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
for _m in _PAULI.values():
    _m.setflags(write=False)

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S_GATE = np.diag([1, 1j]).astype(complex)
PROJ0 = np.diag([1, 0]).astype(complex)
PROJ1 = np.diag([0, 1]).astype(complex)
for _m in (HADAMARD, S_GATE, PROJ0, PROJ1):
    _m.setflags(write=False)


def pauli(label: str) -> np.ndarray:
    """Return the 2x2 Pauli matrix for ``label`` in {I, X, Y, Z}."""
    try:
        return _PAULI[label.upper()].copy()
    except (KeyError, AttributeError):
        raise ValueError(f"unknown Pauli label {label!r}") from None


def spin_half(axis: str) -> np.ndarray:
    """Spin-1/2 operator I_axis = Pauli/2."""
    return 0.5 * pauli(axis)


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices (or vectors), left to right."""
    if not ops:
        raise ValueError("kron needs at least one operand")
    for op in ops:
        if not np.all(np.isfinite(op)):
            raise ValueError("kron operands must be finite")
    return reduce(np.kron, ops)


def pauli_string(labels: str) -> np.ndarray:
    """Tensor product of Paulis, e.g. ``pauli_string("IZZ")``."""
    return kron(*(pauli(c) for c in labels))


def embed(op: np.ndarray, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Lift an operator on ``targets`` (in the given order) to ``n_qubits`` qubits."""
    targets = list(targets)
    k = len(targets)
    if op.shape != (2**k, 2**k):
        raise ValueError(f"operator shape {op.shape} does not act on {k} qubits")
    if len(set(targets)) != k or any(t < 0 or t >= n_qubits for t in targets):
        raise ValueError(f"invalid targets {targets} for {n_qubits} qubits")
    rest = [q for q in range(n_qubits) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest), dtype=complex))
    # full acts on qubit order targets + rest; permute back to 0..n-1
    order = targets + rest
    perm = np.argsort(order)
    t = full.reshape([2] * (2 * n_qubits))
    t = t.transpose(list(perm) + [n_qubits + p for p in perm])
    return t.reshape(2**n_qubits, 2**n_qubits)


def ket(bits: str) -> np.ndarray:
    """Computational basis state from a bit string such as ``"01"``."""
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int(bits, 2)] = 1.0
    return v


def ghz_state(n_qubits: int = 2) -> np.ndarray:
    """(|0...0> + |1...1>)/sqrt(2)."""
    return (ket("0" * n_qubits) + ket("1" * n_qubits)) / np.sqrt(2)


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    return np.outer(psi, psi.conj())


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= tol


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))) <= tol


def validate_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Check the density-matrix invariants and return ``rho`` as a complex array.

    Raises ValueError if ``rho`` is not square with power-of-two dimension,
    not Hermitian (1e-12), not unit trace (1e-12), or has an eigenvalue
    below -1e-10.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    dim = rho.shape[0]
    if dim < 1 or dim & (dim - 1):
        raise ValueError(f"dimension {dim} is not a power of two")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_TOL:
        raise ValueError(f"density matrix not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(rho)
    if abs(tr - 1) > TRACE_TOL:
        raise ValueError(f"density matrix trace is {tr.real:.15f}, expected 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lam < PSD_TOL:
        raise ValueError(f"density matrix not positive semidefinite (min eigenvalue {lam:.3e})")
    return rho


def is_density_matrix(rho: np.ndarray) -> bool:
    try:
        validate_density_matrix(rho)
    except ValueError:
        return False
    return True


def partial_trace(rho: np.ndarray, keep: Iterable[int], dims: Sequence[int]) -> np.ndarray:
    """Reduce ``rho`` onto the subsystems listed in ``keep``.

    ``dims`` gives the dimension of each subsystem in tensor order. Kept
    subsystems stay in ascending index order regardless of the order given.
    """
    rho = np.asarray(rho, dtype=complex)
    dims = [int(d) for d in dims]
    keep = sorted(set(int(k) for k in keep))
    n = len(dims)
    if not keep:
        raise ValueError("keep must be non-empty")
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {n} subsystems")
    total = int(np.prod(dims))
    if rho.shape != (total, total):
        raise ValueError(f"dims {dims} inconsistent with matrix shape {rho.shape}")
    traced = [i for i in range(n) if i not in keep]
    t = rho.reshape(dims + dims)
    # trace out from the highest index down so axis numbers stay valid
    for i in sorted(traced, reverse=True):
        m = t.ndim // 2
        t = np.trace(t, axis1=i, axis2=i + m)
    d_keep = int(np.prod([dims[k] for k in keep]))
    return t.reshape(d_keep, d_keep)


def expectation(rho: np.ndarray, obs: np.ndarray) -> float:
    """Re Tr(rho obs) for a Hermitian observable."""
    obs = np.asarray(obs, dtype=complex)
    if not is_hermitian(obs):
        raise ValueError("observable must be Hermitian")
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != obs.shape:
        raise ValueError(f"shape mismatch: rho {rho.shape} vs obs {obs.shape}")
    return float(np.real(np.einsum("ij,ji->", rho, obs)))


def fidelity_with_pure(rho: np.ndarray, psi: np.ndarray) -> float:
    """<psi|rho|psi> for a normalized state vector ``psi``."""
    psi = np.asarray(psi, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if abs(norm - 1) > 1e-10:
        raise ValueError(f"state vector not normalized (norm {norm:.12f})")
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (psi.size, psi.size):
        raise ValueError(f"shape mismatch: rho {rho.shape} vs psi of length {psi.size}")
    return float(np.real(psi.conj() @ rho @ psi))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of ``a - b`` for Hermitian arguments."""
    d = np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random density matrix."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with phase fix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def rx(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * _PAULI["I"] - 1j * np.sin(theta / 2) * _PAULI["X"]


def ry(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * _PAULI["I"] - 1j * np.sin(theta / 2) * _PAULI["Y"]


def rz(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * _PAULI["I"] - 1j * np.sin(theta / 2) * _PAULI["Z"]


def seed_sequence(seed) -> np.random.SeedSequence:
    """Coerce an int, None or SeedSequence into a SeedSequence."""
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
