"""Electron / 13C register: hyperfine Hamiltonians and conditional precession.

Units
-----
Hyperfine couplings and the Larmor frequency are stored as ordinary
frequencies in kHz. Hamiltonians carry the 2*pi, i.e. ``H = 2*pi*A*I`` in
rad/ms, so an eigen-splitting of ``effective_hamiltonian`` equals ``2*pi*f``
with ``f`` from ``precession_frequencies``. Times are in ns.

The electron is the two-level system {m_s=0 -> |0>, m_s=-1 -> |1>}. The
m_s=+1 level only appears in ``effective_hamiltonian`` and
``precession_frequencies``.

The 13C gyromagnetic ratio (10.7084 MHz/T, i.e. 1.07084 kHz/G) is a standard
tabulated nuclear constant and is not part of the measured data below.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .qmath import PROJ0, PROJ1, kron, pauli, spin_half

GAMMA_C13_KHZ_PER_GAUSS = 1.07084
B_FIELD_GAUSS = 492.65
KHZ_NS = 1e-6  # kHz * ns -> cycles

ELECTRON_LEVELS = (0, -1)


@dataclass(frozen=True)
class HyperfineParams:
    """Parallel (a_zz) and perpendicular (a_zx) hyperfine couplings in kHz."""

    a_zz: float
    a_zx: float
    a_zz_unc: float = 0.0
    a_zx_unc: float = 0.0

    def __post_init__(self):
        if self.a_zx < 0:
            raise ValueError("a_zx must be non-negative; fold the sign into the precession axis")
        if not (np.isfinite(self.a_zz) and np.isfinite(self.a_zx)):
            raise ValueError("hyperfine parameters must be finite")


@dataclass(frozen=True)
class NuclearSpin:
    id: str
    params: HyperfineParams


# Measured 13C couplings (kHz) with last-digit uncertainties.
HYPERFINE_TABLE = (
    NuclearSpin("1", HyperfineParams(-1296.9, 180.0, 0.2, 1.0)),
    NuclearSpin("2", HyperfineParams(50.16, 101.6, 0.07, 0.4)),
    NuclearSpin("3", HyperfineParams(30.62, 43.0, 0.05, 0.7)),
    NuclearSpin("4", HyperfineParams(-41.20, 52.3, 0.07, 0.7)),
)


@dataclass(frozen=True)
class SpinRegister:
    """Electron plus an ordered list of nuclear spins in a static field along z."""

    b_z: float = B_FIELD_GAUSS
    gamma_n: float = GAMMA_C13_KHZ_PER_GAUSS
    spins: tuple[NuclearSpin, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.b_z <= 0 or self.gamma_n <= 0:
            raise ValueError("b_z and gamma_n must be positive")
        object.__setattr__(self, "spins", tuple(self.spins))
        ids = [s.id for s in self.spins]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate nuclear spin ids: {ids}")

    @property
    def larmor_khz(self) -> float:
        """omega_L / 2pi = gamma_n * B_z."""
        return self.gamma_n * self.b_z

    @property
    def n_qubits(self) -> int:
        return 1 + len(self.spins)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.spins)

    def spin(self, spin_id: str) -> NuclearSpin:
        for s in self.spins:
            if s.id == spin_id:
                return s
        raise KeyError(f"no nuclear spin {spin_id!r} in register (have {self.ids})")

    def qubit_index(self, spin_id: str) -> int:
        """Subsystem index of a nucleus (electron is 0)."""
        return 1 + self.ids.index(self.spin(spin_id).id)

    def subregister(self, ids: Iterable[str]) -> "SpinRegister":
        wanted = set(ids)
        missing = wanted - set(self.ids)
        if missing:
            raise KeyError(f"unknown spin ids {sorted(missing)}")
        return SpinRegister(self.b_z, self.gamma_n, tuple(s for s in self.spins if s.id in wanted))


def reference_register(ids: Sequence[str] | None = None, b_z: float = B_FIELD_GAUSS,
                     gamma_n: float = GAMMA_C13_KHZ_PER_GAUSS) -> SpinRegister:
    reg = SpinRegister(b_z, gamma_n, HYPERFINE_TABLE)
    return reg if ids is None else reg.subregister(ids)


def precession_vector(ms: int, spin: NuclearSpin, reg: SpinRegister) -> tuple[float, float]:
    """(h_x, h_z) in kHz such that H_ms = 2pi (h_x I_x + h_z I_z)."""
    wl = reg.larmor_khz
    p = spin.params
    if ms == 0:
        return 0.0, wl
    if ms in (1, -1):
        return p.a_zx, wl + ms * p.a_zz
    raise ValueError(f"electron level must be 0, -1 or +1, got {ms!r}")


def effective_hamiltonian(ms: int, spin: NuclearSpin, reg: SpinRegister) -> np.ndarray:
    """Nuclear Hamiltonian (rad/ms) for the electron in level ``ms``.

    m_s = 0 gives omega_L I_z; m_s = +-1 gives (omega_L +- A_zz) I_z + A_zx I_x.
    """
    hx, hz = precession_vector(ms, spin, reg)
    return 2 * np.pi * (hx * spin_half("X") + hz * spin_half("Z"))


def precession_frequencies(spin: NuclearSpin, reg: SpinRegister) -> tuple[float, float]:
    """Free-precession frequencies (kHz) for the electron in m_s = +1 and m_s = -1."""
    p = spin.params
    wl = reg.larmor_khz
    f_plus = float(np.hypot(p.a_zx, p.a_zz + wl))
    f_minus = float(np.hypot(p.a_zx, p.a_zz - wl))
    return f_plus, f_minus


def precession_unitary(hx, hz, t_ns) -> np.ndarray:
    """exp(-i 2pi (hx I_x + hz I_z) t) in closed form.

    Broadcasts over array-valued ``t_ns``; the result has shape
    ``np.shape(t_ns) + (2, 2)``.
    """
    w = float(np.hypot(hx, hz))
    t = np.asarray(t_ns, dtype=float)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    if w == 0.0:
        out[...] = np.eye(2)
        return out
    half = np.pi * w * t * KHZ_NS
    c, s = np.cos(half), np.sin(half)
    nx, nz = hx / w, hz / w
    out[..., 0, 0] = c - 1j * s * nz
    out[..., 1, 1] = c + 1j * s * nz
    out[..., 0, 1] = -1j * s * nx
    out[..., 1, 0] = -1j * s * nx
    return out


def nuclear_propagator(ms: int, spin: NuclearSpin, reg: SpinRegister, t_ns: float) -> np.ndarray:
    hx, hz = precession_vector(ms, spin, reg)
    return precession_unitary(hx, hz, t_ns)


def conditional_free_evolution(reg: SpinRegister, t: float) -> np.ndarray:
    """Free evolution of the whole register for ``t`` ns.

    |0><0| ⊗ prod_j exp(-i H_0 t) + |1><1| ⊗ prod_j exp(-i H_-1 t).
    """
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    u0 = [nuclear_propagator(0, s, reg, t) for s in reg.spins]
    u1 = [nuclear_propagator(-1, s, reg, t) for s in reg.spins]
    if not reg.spins:
        return np.eye(2, dtype=complex)
    return kron(PROJ0, *u0) + kron(PROJ1, *u1)


def microwave_pi_pulse(reg: SpinRegister, axis: str = "X") -> np.ndarray:
    """Instantaneous electron pi pulse about x or y (X or Y on the electron qubit)."""
    if axis.upper() not in ("X", "Y"):
        raise ValueError(f"pi pulse axis must be X or Y, got {axis!r}")
    return kron(pauli(axis), np.eye(2 ** len(reg.spins), dtype=complex))
