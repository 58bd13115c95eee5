"""Kraus channels for the two-nucleus stabilizer pumping maps.

The two maps drive a pair of qubits into the +1 eigenspaces of Z⊗Z and X⊗X
respectively; applied in succession they leave the GHZ state
(|00> + |11>)/sqrt(2) as the unique fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qmath import HADAMARD, is_unitary, kron, pauli

COMPLETENESS_TOL = 1e-12
PRUNE_TOL = 1e-14


class IncompleteChannelError(ValueError):
    """Raised when sum_k E_k^dag E_k deviates from the identity."""

    def __init__(self, residual: float):
        super().__init__(f"Kraus operators are not complete (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class KrausChannel:
    """Operator-sum map rho -> sum_k E_k rho E_k^dag."""

    ops: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(np.array(op, dtype=complex) for op in self.ops)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        dim = ops[0].shape[0]
        for op in ops:
            if op.shape != (dim, dim):
                raise ValueError(f"Kraus operator shape {op.shape} != ({dim}, {dim})")
            op.setflags(write=False)
        object.__setattr__(self, "ops", ops)

    @property
    def dim(self) -> int:
        return self.ops[0].shape[0]

    def __len__(self) -> int:
        return len(self.ops)

    def completeness_residual(self) -> float:
        acc = sum(op.conj().T @ op for op in self.ops)
        return float(np.max(np.abs(acc - np.eye(self.dim))))

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return apply_channel(self, rho)


def build_F_operators() -> tuple[np.ndarray, np.ndarray]:
    """F0 = (1 + X X)/2 and F1 = Z_1 (1 - X X)/2 on two qubits."""
    eye = np.eye(4, dtype=complex)
    xx = kron(pauli("X"), pauli("X"))
    z1 = kron(pauli("Z"), pauli("I"))
    f0 = 0.5 * (eye + xx)
    f1 = 0.5 * z1 @ (eye - xx)
    return f0, f1


def build_Ex() -> KrausChannel:
    """Pumping map onto the +1 eigenspace of X⊗X."""
    f0, f1 = build_F_operators()
    return KrausChannel(((f0 + f1) / np.sqrt(2), (f0 - f1) / np.sqrt(2)))


def build_Ez() -> KrausChannel:
    """Pumping map onto the +1 eigenspace of Z⊗Z: (H⊗H) applied after each E^x_k."""
    hh = kron(HADAMARD, HADAMARD)
    return KrausChannel(tuple(hh @ op for op in build_Ex().ops))


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel((np.eye(dim, dtype=complex),))


def apply_channel(ch: KrausChannel, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.dim, ch.dim):
        raise ValueError(f"channel dimension {ch.dim} does not match rho shape {rho.shape}")
    residual = ch.completeness_residual()
    if residual > COMPLETENESS_TOL:
        raise IncompleteChannelError(residual)
    out = sum(op @ rho @ op.conj().T for op in ch.ops)
    return 0.5 * (out + out.conj().T)


def channel_from_circuit(
    u: np.ndarray, ancilla_dim: int, ancilla_init: np.ndarray
) -> KrausChannel:
    """Kraus operators of the system map induced by a unitary on ancilla ⊗ system.

    The ancilla is the first tensor factor. ``E_k = <k|_anc U |init>_anc`` for
    each computational basis state k; operators with norm below 1e-14 are
    dropped.
    """
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u, tol=1e-10):
        raise ValueError("circuit matrix is not unitary")
    init = np.asarray(ancilla_init, dtype=complex).ravel()
    if init.size != ancilla_dim or abs(np.linalg.norm(init) - 1) > 1e-10:
        raise ValueError("ancilla_init must be a normalized vector of length ancilla_dim")
    total = u.shape[0]
    if total % ancilla_dim:
        raise ValueError(f"ancilla dimension {ancilla_dim} does not divide {total}")
    d = total // ancilla_dim
    blocks = u.reshape(ancilla_dim, d, ancilla_dim, d)
    ops = []
    for k in range(ancilla_dim):
        op = np.einsum("aij,i->aj", blocks[k], init)
        if np.linalg.norm(op) >= PRUNE_TOL:
            ops.append(op)
    return KrausChannel(tuple(ops))


def compose(a: KrausChannel, b: KrausChannel) -> KrausChannel:
    """Channel ``b ∘ a`` (apply ``a`` first) with operators B_j A_i."""
    if a.dim != b.dim:
        raise ValueError(f"cannot compose channels of dimension {a.dim} and {b.dim}")
    return KrausChannel(tuple(bj @ ai for ai in a.ops for bj in b.ops))


def hermitian_basis(dim: int) -> list[np.ndarray]:
    """dim**2 Hermitian matrices spanning all dim x dim matrices."""
    basis = []
    for i in range(dim):
        for j in range(dim):
            m = np.zeros((dim, dim), dtype=complex)
            if i == j:
                m[i, i] = 1
            elif i < j:
                m[i, j] = m[j, i] = 1
            else:
                m[j, i] = -1j
                m[i, j] = 1j
            basis.append(m)
    return basis


def channel_distance(a: KrausChannel, b: KrausChannel) -> float:
    """Max-entry distance between the outputs of two channels over a Hermitian basis.

    Zero exactly when the maps agree on every input, since the basis spans
    the full operator space. Per-operator phases do not matter.
    """
    if a.dim != b.dim:
        raise ValueError(f"channel dimensions differ: {a.dim} vs {b.dim}")
    worst = 0.0
    for m in hermitian_basis(a.dim):
        out_a = sum(op @ m @ op.conj().T for op in a.ops)
        out_b = sum(op @ m @ op.conj().T for op in b.ops)
        worst = max(worst, float(np.max(np.abs(out_a - out_b))))
    return worst


def superoperator(ch: KrausChannel) -> np.ndarray:
    """Matrix S with vec(E(rho)) = S vec(rho), row-major vectorization."""
    return sum(np.kron(op, op.conj()) for op in ch.ops)

