"""Dissipative GHZ pumping of two nuclei through an optically reset electron.

Circuits act on logical qubits ``"e"``, ``"n1"``, ``"n2"`` (plus anything a
layout maps). A layout sends labels to register subsystem indices, with the
electron at index 0. Two backends turn gates into register unitaries:

* ``IdealBackend``: exact, instantaneous gates.
* ``CompiledBackend``: electron gates stay ideal; nuclear gates and
  electron-controlled NOTs are assembled from compiled XY-8 pulse trains
  acting on the whole register, spectators included.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .qmath import (
    HADAMARD,
    S_GATE,
    embed,
    expectation,
    fidelity_with_pure,
    ghz_state,
    kron,
    maximally_mixed,
    partial_trace,
    pauli,
    pauli_string,
    rx,
    ry,
    rz,
    validate_density_matrix,
)

GHZ = ghz_state(2)

_SINGLE = {
    "H": lambda: HADAMARD,
    "X": lambda: pauli("X"),
    "Y": lambda: pauli("Y"),
    "Z": lambda: pauli("Z"),
    "S": lambda: S_GATE,
    "SDG": lambda: S_GATE.conj().T,
}
_ROTATIONS = {"RX": rx, "RY": ry, "RZ": rz}
_TWO_QUBIT = frozenset({"CNOT", "CROT"})
GATE_NAMES = frozenset(_SINGLE) | frozenset(_ROTATIONS) | _TWO_QUBIT
_SELF_INVERSE = frozenset({"H", "X", "Y", "Z", "CNOT"})


@dataclass(frozen=True)
class Gate:
    name: str
    targets: tuple[str, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.upper())
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.name not in GATE_NAMES:
            raise ValueError(f"unknown gate {self.name!r}")
        arity = 2 if self.name in _TWO_QUBIT else 1
        if len(self.targets) != arity or len(set(self.targets)) != arity:
            raise ValueError(f"{self.name} needs {arity} distinct target(s), got {self.targets}")
        if (self.name in _ROTATIONS) != bool(self.params):
            raise ValueError(f"bad parameters for {self.name}: {self.params}")

    def __str__(self):
        p = f"({', '.join(f'{x:.4g}' for x in self.params)})" if self.params else ""
        return f"{self.name}{p} {','.join(self.targets)}"


@dataclass(frozen=True)
class Circuit:
    gates: tuple[Gate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)

    def __add__(self, other: "Circuit") -> "Circuit":
        return Circuit(self.gates + tuple(other.gates))

    @property
    def qubits(self) -> set[str]:
        return {q for g in self.gates for q in g.targets}

    @property
    def gate_names(self) -> set[str]:
        return {g.name for g in self.gates}

    def simplified(self) -> "Circuit":
        """Cancel adjacent pairs of identical self-inverse gates (H, X, Y, Z, CNOT).

        Pairs cancel only when no gate touching their qubits sits between
        them; the unitary is unchanged.
        """
        out: list[Gate] = []
        for gate in self.gates:
            if gate.name in _SELF_INVERSE:
                for k in range(len(out) - 1, -1, -1):
                    prev = out[k]
                    if set(prev.targets) & set(gate.targets):
                        if prev == gate:
                            del out[k]
                            break
                        out.append(gate)
                        break
                else:
                    out.append(gate)
            else:
                out.append(gate)
        return Circuit(tuple(out))

    @classmethod
    def of(cls, *specs) -> "Circuit":
        """Build from tuples like ``("H", "e")``, ``("CNOT", "e", "n1")``, ``("RZ", "n1", 1.57)``."""
        gates = []
        for spec in specs:
            name, *rest = spec
            targets = tuple(r for r in rest if isinstance(r, str))
            params = tuple(r for r in rest if not isinstance(r, str))
            gates.append(Gate(name, targets, params))
        return cls(tuple(gates))


def sequence2_circuit() -> Circuit:
    """Pumps the nuclei into the +1 eigenspace of X⊗X (after an electron reset).

    The nucleus-controlled NOT C_{n1 e} is written as H_e H_n1 C_{e n1} H_e H_n1.
    """
    return Circuit.of(
        ("H", "e"),
        ("CNOT", "e", "n1"),
        ("CNOT", "e", "n2"),
        ("H", "e"), ("H", "n1"),
        ("CNOT", "e", "n1"),
        ("H", "e"), ("H", "n1"),
    )


def sequence1_circuit() -> Circuit:
    """Pumps the nuclei into the +1 eigenspace of Z⊗Z."""
    return sequence2_circuit() + Circuit.of(("H", "n1"), ("H", "n2"))


# ---------------------------------------------------------------------------
# backends


def _ideal_matrix(gate: Gate) -> np.ndarray:
    if gate.name in _SINGLE:
        return _SINGLE[gate.name]()
    if gate.name in _ROTATIONS:
        return _ROTATIONS[gate.name](gate.params[0])
    if gate.name == "CROT":
        # control-conditioned +-pi/2 x rotation exp(-i pi/4 Z X)
        return (np.eye(4) - 1j * kron(pauli("Z"), pauli("X"))) / np.sqrt(2)
    return np.diag([1, 1, 0, 0]).astype(complex) + kron(np.diag([0, 1]), pauli("X"))


class IdealBackend:
    """Exact gates on any layout."""

    def gate_unitary(self, gate: Gate, layout: Mapping[str, int], n_qubits: int) -> np.ndarray:
        idx = [layout[q] for q in gate.targets]
        return embed(_ideal_matrix(gate), idx, n_qubits)


class CompiledBackend:
    """Pulse-level gates from a compiled library on a physical register.

    The library maps ``"<spin id>:<kind>"`` to ``CompiledGate`` entries;
    ``spin_of`` maps logical nuclear labels to spin ids.

    ``z_mode="virtual"`` realizes nuclear z rotations as exact frame updates
    (phase tracking, like the frame corrections attached to every compiled
    gate). ``z_mode="pulsed"`` uses the compiled ``z_half`` pulse train,
    whose rotation axis is tilted off z by the averaged transverse coupling.
    """

    def __init__(self, reg, library: Mapping, spin_of: Mapping[str, str], z_mode: str = "virtual"):
        from . import pulse

        if z_mode not in ("virtual", "pulsed"):
            raise ValueError(f"z_mode must be 'virtual' or 'pulsed', got {z_mode!r}")
        self.z_mode = z_mode
        self.reg = reg
        self.spin_of = dict(spin_of)
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._library = library
        self._pulse = pulse

    def _compiled(self, spin_id: str, kind: str) -> np.ndarray:
        key = (spin_id, kind)
        if key not in self._cache and kind == "z_half" and self.z_mode == "virtual":
            self._cache[key] = embed(rz(np.pi / 2), [self.reg.qubit_index(spin_id)], self.reg.n_qubits)
        if key not in self._cache:
            entry = self._library[self._pulse.library_key(spin_id, kind)]
            self._cache[key] = self._pulse.compiled_unitary(entry, self.reg)
        return self._cache[key]

    def _sign(self, spin_id: str) -> int:
        return self._library[self._pulse.library_key(spin_id, "conditional_x_half")].sign

    def gate_unitary(self, gate: Gate, layout: Mapping[str, int], n_qubits: int) -> np.ndarray:
        if n_qubits != self.reg.n_qubits:
            raise ValueError("layout does not match the compiled register")
        idx = [layout[q] for q in gate.targets]
        if gate.name in _TWO_QUBIT:
            if idx[0] != 0:
                raise ValueError("compiled mode only provides electron-controlled two-qubit gates")
            spin_id = self.spin_of[gate.targets[1]]
            if gate.name == "CROT":
                return self._crot(spin_id, n_qubits, sign=1)
            return self._cnot(spin_id, n_qubits)
        if idx[0] == 0:
            return embed(_ideal_matrix(gate), idx, n_qubits)
        spin_id = self.spin_of[gate.targets[0]]
        zh = self._compiled(spin_id, "z_half")
        xh = self._compiled(spin_id, "unconditional_x_half")
        if gate.name == "H":
            # H = Rz(pi/2) Rx(pi/2) Rz(pi/2) up to a global phase
            return zh @ xh @ zh
        if gate.name == "S":
            return zh
        if gate.name == "SDG":
            return zh @ zh @ zh
        if gate.name == "X":
            return xh @ xh
        if gate.name == "RZ" and np.isclose(gate.params[0], np.pi / 2):
            return zh
        if gate.name == "RX" and np.isclose(gate.params[0], np.pi / 2):
            return xh
        raise ValueError(f"compiled mode has no realization for {gate}")

    def _crot(self, spin_id: str, n_qubits: int, sign: int) -> np.ndarray:
        """exp(-i sign pi/4 Z_e X_n); X_e conjugation flips the compiled sign."""
        uc = self._compiled(spin_id, "conditional_x_half")
        if self._sign(spin_id) != sign:
            x_e = embed(pauli("X"), [0], n_qubits)
            uc = x_e @ uc @ x_e
        return uc

    def _cnot(self, spin_id: str, n_qubits: int) -> np.ndarray:
        # CNOT = S_e exp(+i pi/4 Z_e X_n) Rx_n(pi/2) up to a global phase
        xh = self._compiled(spin_id, "unconditional_x_half")
        s_e = embed(S_GATE, [0], n_qubits)
        return s_e @ self._crot(spin_id, n_qubits, sign=-1) @ xh


def circuit_unitary(circuit: Circuit, layout: Mapping[str, int], n_qubits: int, backend=None) -> np.ndarray:
    backend = IdealBackend() if backend is None else backend
    missing = circuit.qubits - set(layout)
    if missing:
        raise ValueError(f"layout lacks qubits {sorted(missing)}")
    u = np.eye(2**n_qubits, dtype=complex)
    for gate in circuit:
        u = backend.gate_unitary(gate, layout, n_qubits) @ u
    return u


# ---------------------------------------------------------------------------
# dissipative protocol


@dataclass(frozen=True)
class NoiseModel:
    pump_fidelity: float = 1.0
    gate_mode: str = "ideal"
    spectators_enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.pump_fidelity <= 1.0:
            raise ValueError("pump_fidelity must lie in [0, 1]")
        if self.gate_mode not in ("ideal", "compiled"):
            raise ValueError(f"gate_mode must be 'ideal' or 'compiled', got {self.gate_mode!r}")


def optical_pump(rho: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Reset the electron (subsystem 0): |0> with probability pump_fidelity, else |1>."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    if dim < 2 or dim % 2:
        raise ValueError("state has no electron subsystem")
    rest = partial_trace(rho, range(1, int(np.log2(dim))), [2] * int(np.log2(dim))) if dim > 2 else np.ones((1, 1))
    p = noise.pump_fidelity
    return kron(np.diag([p, 1 - p]).astype(complex), rest)


@dataclass
class ProtocolSetup:
    """Register layout plus the gate backend used by ``run_protocol``."""

    n_qubits: int
    layout: dict[str, int]
    backend: object = field(default_factory=IdealBackend)
    simplify: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def circuits(self) -> tuple[Circuit, Circuit]:
        c1, c2 = sequence1_circuit(), sequence2_circuit()
        if self.simplify:
            c1, c2 = c1.simplified(), c2.simplified()
        return c1, c2

    def sequence_unitaries(self) -> tuple[np.ndarray, np.ndarray]:
        if "seq" not in self._cache:
            c1, c2 = self.circuits()
            u1 = circuit_unitary(c1, self.layout, self.n_qubits, self.backend)
            u2 = circuit_unitary(c2, self.layout, self.n_qubits, self.backend)
            self._cache["seq"] = (u1, u2)
        return self._cache["seq"]

    def embed_nuclear_state(self, rho_n: np.ndarray) -> np.ndarray:
        """Electron |0>, targets in ``rho_n``, all other nuclei maximally mixed."""
        i, j = self.layout["n1"], self.layout["n2"]
        n = self.n_qubits
        others = [q for q in range(1, n) if q not in (i, j)]
        parts = [np.diag([1, 0]).astype(complex), np.asarray(rho_n, dtype=complex)]
        parts += [maximally_mixed(2)] * len(others)
        rho = kron(*parts)
        return _permute(rho, [0, i, j] + others, n)

    def nuclear_state(self, rho: np.ndarray) -> np.ndarray:
        i, j = self.layout["n1"], self.layout["n2"]
        red = partial_trace(rho, [i, j], [2] * self.n_qubits)
        if i > j:
            swap = np.eye(4)[[0, 2, 1, 3]]
            red = swap @ red @ swap
        return red


def _permute(rho: np.ndarray, order: Sequence[int], n: int) -> np.ndarray:
    """Reorder subsystems: factor k of ``rho`` goes to position ``order[k]``."""
    t = rho.reshape([2] * (2 * n))
    inv = np.argsort(order)
    t = t.transpose(list(inv) + [n + k for k in inv])
    return t.reshape(2**n, 2**n)


def ideal_setup() -> ProtocolSetup:
    return ProtocolSetup(3, {"e": 0, "n1": 1, "n2": 2})


def compiled_setup(reg, library: Mapping, targets: tuple[str, str] = ("2", "4"),
                   z_mode: str = "virtual") -> ProtocolSetup:
    """Protocol on a physical register; non-target nuclei act as spectators."""
    layout = {"e": 0, "n1": reg.qubit_index(targets[0]), "n2": reg.qubit_index(targets[1])}
    backend = CompiledBackend(reg, library, {"n1": targets[0], "n2": targets[1]}, z_mode)
    return ProtocolSetup(reg.n_qubits, layout, backend, simplify=True)


def correlations(rho_n: np.ndarray) -> tuple[float, float, float]:
    """(<XX>, <YY>, <ZZ>) of a two-qubit state."""
    return tuple(expectation(rho_n, pauli_string(p)) for p in ("XX", "YY", "ZZ"))


def witness_fidelity(xx: float, yy: float, zz: float) -> float:
    """GHZ fidelity bound 1/2 - <W> with W = (1 - XX + YY - ZZ)/4."""
    for v in (xx, yy, zz):
        if not -1 - 1e-9 <= v <= 1 + 1e-9:
            raise ValueError(f"correlation {v} outside [-1, 1]")
    return 0.5 - 0.25 * (1 - xx + yy - zz)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    xx: float
    yy: float
    zz: float
    fidelity: float
    rho: np.ndarray = field(repr=False)
    measured: tuple[float, float, float] | None = None

    @property
    def witness(self) -> float:
        return witness_fidelity(self.xx, self.yy, self.zz)

    @property
    def measured_witness(self) -> float | None:
        return None if self.measured is None else 0.5 - 0.25 * (1 - self.measured[0] + self.measured[1] - self.measured[2])


@dataclass
class ProtocolTrace:
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([r.fidelity for r in self.rounds])

    @property
    def measured_fidelities(self) -> np.ndarray | None:
        if not self.rounds or self.rounds[0].measured is None:
            return None
        return np.array([r.measured_witness for r in self.rounds])

    CSV_HEADER = ("round", "xx", "yy", "zz", "fidelity", "witness_fidelity",
                  "xx_measured", "yy_measured", "zz_measured", "witness_measured")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for r in self.rounds:
                meas = list(r.measured) + [r.measured_witness] if r.measured else ["", "", "", ""]
                w.writerow([r.round] + [_fmt(v) for v in (r.xx, r.yy, r.zz, r.fidelity, r.witness)]
                           + [_fmt(v) if v != "" else "" for v in meas])


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def read_trace_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in rows]


def run_protocol(
    rho0: np.ndarray,
    rounds: int,
    noise: NoiseModel = NoiseModel(),
    setup: ProtocolSetup | None = None,
    readout=None,
    seed: int | None = None,
) -> ProtocolTrace:
    """Apply ``rounds`` x (pump, sequence 1, pump, sequence 2, pump).

    ``rho0`` is the initial two-nucleus state; the electron starts in |0>
    and spectator nuclei maximally mixed. If ``readout`` (a
    ``measurement.ReadoutModel``) is given, each round also records
    correlations estimated from simulated single-shot readout.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rho0 = validate_density_matrix(rho0)
    if rho0.shape != (4, 4):
        raise ValueError("rho0 must be a two-qubit density matrix")
    if setup is None:
        if noise.gate_mode != "ideal":
            raise ValueError("compiled gate mode needs an explicit setup (see compiled_setup)")
        setup = ideal_setup()
    u1, u2 = setup.sequence_unitaries()
    rng = np.random.default_rng(seed)
    rho = setup.embed_nuclear_state(rho0)
    trace = ProtocolTrace()
    for k in range(1, rounds + 1):
        rho = optical_pump(rho, noise)
        rho = u1 @ rho @ u1.conj().T
        rho = optical_pump(rho, noise)
        rho = u2 @ rho @ u2.conj().T
        rho = optical_pump(rho, noise)
        rho_n = setup.nuclear_state(rho)
        rho_n = 0.5 * (rho_n + rho_n.conj().T)
        xx, yy, zz = correlations(rho_n)
        measured = None
        if readout is not None:
            from .measurement import measure_expectation

            measured = tuple(measure_expectation(v, readout, rng)[0] for v in (xx, yy, zz))
        trace.rounds.append(RoundRecord(k, xx, yy, zz, fidelity_with_pure(rho_n, GHZ), rho_n, measured))
    return trace


def realistic_register_ids(spectators_enabled: bool, targets: Iterable[str] = ("2", "4"),
                           spectators: Iterable[str] = ("1",)) -> list[str]:
    ids = set(targets) | (set(spectators) if spectators_enabled else set())
    return sorted(ids, key=int)
