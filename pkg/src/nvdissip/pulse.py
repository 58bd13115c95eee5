"""XY-8 CPMG engine: decoupling signals, conditional nuclear gates, gate compilation.

A sequence with spacing ``tau`` and ``N`` pulses is

    tau/2 - pi - tau - pi - ... - pi - tau/2

with instantaneous electron pi pulses whose phases follow X-Y-X-Y-Y-X-Y-X,
truncated after ``N`` pulses. ``tau`` is the full inter-pulse spacing.

Because the pulses are perfect flips, each electron basis state follows a
deterministic path and the register unitary factorizes as

    U = sum_b c_b |b'><b| ⊗ (⊗_j W_b^(j))

with one 2x2 nuclear propagator W per branch and nucleus. All routines below
work on these per-branch propagators, vectorized over ``tau``.

Compiled gates carry software frame corrections applied after the pulse
train: an electron phase and a z-phase for every nucleus. These model the
phase tracking needed when lab-frame gates are composed back to back.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .qmath import PROJ0, PROJ1, is_unitary, kron, pauli, rx, rz
from .spin_model import (
    KHZ_NS,
    NuclearSpin,
    SpinRegister,
    precession_frequencies,
    precession_unitary,
    precession_vector,
)

XY8_PATTERN = "XYXYYXYX"

# Published gate parameters at B_z = 492.65 G: (spin, gate) -> (tau ns, N)
GATE_TABLE = {
    ("2", "conditional_x_half"): (4915, 16),
    ("2", "z_half"): (37, 4),
    ("2", "unconditional_x_half"): (6260, 10),
    ("4", "conditional_x_half"): (4411, 16),
    ("4", "z_half"): (36, 4),
    ("4", "unconditional_x_half"): (5886, 22),
}


class GateKind(str, enum.Enum):
    CONDITIONAL_X_HALF = "conditional_x_half"
    Z_HALF = "z_half"
    UNCONDITIONAL_X_HALF = "unconditional_x_half"
    CNOT_E_TO_N = "cnot_e_to_n"


@dataclass(frozen=True)
class GateTarget:
    kind: GateKind
    spin_id: str

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))


@dataclass(frozen=True)
class CpmgGateSpec:
    tau: float
    n_pulses: int
    phase_pattern: str | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.n_pulses < 0:
            raise ValueError("n_pulses must be non-negative")
        if self.phase_pattern is not None and set(self.phase_pattern) - {"X", "Y"}:
            raise ValueError("phase pattern may only contain X and Y")

    @property
    def pulses(self) -> str:
        base = self.phase_pattern or XY8_PATTERN
        return "".join(base[k % len(base)] for k in range(self.n_pulses))

    @property
    def duration(self) -> float:
        return self.tau * max(self.n_pulses, 1)


class CompileError(RuntimeError):
    """No grid point reached the requested fidelity floor."""

    def __init__(self, message: str, best: "CompiledGate"):
        super().__init__(message)
        self.best = best


class GateQualityWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# branch propagators


def _pulse_phase(axis: str, b: int) -> complex:
    # Y|0> = i|1>, Y|1> = -i|0>
    if axis == "X":
        return 1.0
    return 1j if b == 0 else -1j


def electron_paths(pulses: str) -> dict[int, tuple[int, complex]]:
    """Final electron state and accumulated pulse phase for each initial state."""
    out = {}
    for b0 in (0, 1):
        b, phase = b0, 1.0 + 0j
        for p in pulses:
            phase *= _pulse_phase(p, b)
            b ^= 1
        out[b0] = (b, phase)
    return out


def branch_propagators(spin: NuclearSpin, reg: SpinRegister, taus, n_pulses: int) -> np.ndarray:
    """Nuclear propagators along both electron paths.

    Returns an array of shape ``(2,) + np.shape(taus) + (2, 2)`` indexed by
    the initial electron state. Pulse phases are not included.
    """
    taus = np.asarray(taus, dtype=float)
    h = {0: precession_vector(0, spin, reg), 1: precession_vector(-1, spin, reg)}
    half = {b: precession_unitary(*h[b], taus / 2) for b in (0, 1)}
    if n_pulses == 0:
        return np.stack([half[b] @ half[b] for b in (0, 1)])
    full = {b: precession_unitary(*h[b], taus) for b in (0, 1)}
    out = []
    for b0 in (0, 1):
        b = b0
        w = half[b]
        for k in range(n_pulses):
            b ^= 1
            w = (full[b] if k < n_pulses - 1 else half[b]) @ w
        out.append(w)
    return np.stack(out)


def cpmg_unitary(spec: CpmgGateSpec, reg: SpinRegister) -> np.ndarray:
    """Register unitary of the full pulse sequence (electron first)."""
    pulses = spec.pulses
    paths = electron_paths(pulses)
    dn = 2 ** len(reg.spins)
    props = [branch_propagators(s, reg, spec.tau, spec.n_pulses) for s in reg.spins]
    u = np.zeros((2 * dn, 2 * dn), dtype=complex)
    for b0 in (0, 1):
        b1, phase = paths[b0]
        nuc = kron(*(p[b0] for p in props)) if props else np.eye(1, dtype=complex)
        outer = np.zeros((2, 2), dtype=complex)
        outer[b1, b0] = phase
        u += np.kron(outer, nuc)
    return u


def cpmg_signal(reg: SpinRegister, tau_grid: Sequence[float], n_pulses: int) -> np.ndarray:
    """Probability that an electron prepared in |+> returns to |+>.

    Nuclei start maximally mixed. Values lie in [0, 1].
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.size == 0:
        raise ValueError("tau grid is empty")
    pulses = XY8_PATTERN * (n_pulses // 8 + 1)
    paths = electron_paths(pulses[:n_pulses])
    overlap = np.ones(taus.shape, dtype=complex)
    for s in reg.spins:
        w = branch_propagators(s, reg, taus, n_pulses)
        overlap *= 0.5 * np.einsum("...ij,...ij->...", w[0], w[1].conj())
    (_, c0), (_, c1) = paths[0], paths[1]
    coherence = np.real(c0 * np.conj(c1) * overlap)
    return np.clip(0.5 * (1 + coherence), 0.0, 1.0)


@dataclass(frozen=True)
class RealizedGate:
    full: np.ndarray  # whole register
    pair: np.ndarray  # electron + target simulated without spectators


def realized_gate(spec: CpmgGateSpec, reg: SpinRegister, target_spin: str) -> RealizedGate:
    reg.spin(target_spin)
    full = cpmg_unitary(spec, reg)
    if len(reg.spins) == 1:
        return RealizedGate(full, full)
    return RealizedGate(full, cpmg_unitary(spec, reg.subregister([target_spin])))


# ---------------------------------------------------------------------------
# fidelities and ideal targets


def gate_fidelity(u_actual: np.ndarray, u_ideal: np.ndarray) -> float:
    """Average gate fidelity (|Tr(U_ideal^dag U)|^2/d + 1)/(d + 1)."""
    u_actual = np.asarray(u_actual, dtype=complex)
    u_ideal = np.asarray(u_ideal, dtype=complex)
    if u_actual.shape != u_ideal.shape:
        raise ValueError(f"shape mismatch {u_actual.shape} vs {u_ideal.shape}")
    if not (is_unitary(u_actual, 1e-8) and is_unitary(u_ideal, 1e-8)):
        raise ValueError("gate_fidelity needs unitary inputs")
    d = u_actual.shape[0]
    overlap = abs(np.trace(u_ideal.conj().T @ u_actual)) ** 2
    return float(min(1.0, (overlap / d + 1) / (d + 1)))


def _cond(block0: np.ndarray, block1: np.ndarray) -> np.ndarray:
    return kron(PROJ0, block0) + kron(PROJ1, block1)


def ideal_blocks(kind: GateKind, sign: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Nuclear blocks (electron |0>, electron |1>) of an ideal two-qubit target."""
    kind = GateKind(kind)
    if kind is GateKind.CONDITIONAL_X_HALF:
        return rx(sign * np.pi / 2), rx(-sign * np.pi / 2)
    if kind is GateKind.UNCONDITIONAL_X_HALF:
        return rx(np.pi / 2), rx(np.pi / 2)
    if kind is GateKind.Z_HALF:
        return rz(np.pi / 2), rz(np.pi / 2)
    if kind is GateKind.CNOT_E_TO_N:
        return np.eye(2, dtype=complex), pauli("X")
    raise ValueError(kind)


def ideal_gate(kind: GateKind, sign: int = 1) -> np.ndarray:
    return _cond(*ideal_blocks(kind, sign))


def electron_phase_gate(phi: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * phi)])


_THETA_GRID = np.linspace(-np.pi, np.pi, 181, endpoint=False)


def _best_frame(a, c, weights=None):
    """Maximize sum_b |a_b e^{-i theta} + c_b| over theta.

    ``a`` and ``c`` have shape (2, ...). Returns (value, theta), each of shape
    ``a.shape[1:]``. Coarse grid followed by a bracketed golden-section search.
    """
    a = np.asarray(a)
    c = np.asarray(c)

    def objective(theta):
        ph = np.exp(-1j * theta)
        return np.abs(a[0] * ph + c[0]) + np.abs(a[1] * ph + c[1])

    grid_vals = objective(_THETA_GRID.reshape((-1,) + (1,) * (a.ndim - 1)))
    idx = np.argmax(grid_vals, axis=0)
    step = _THETA_GRID[1] - _THETA_GRID[0]
    lo = _THETA_GRID[idx] - step
    hi = _THETA_GRID[idx] + step
    g = (np.sqrt(5) - 1) / 2
    for _ in range(40):
        m1 = hi - g * (hi - lo)
        m2 = lo + g * (hi - lo)
        better = objective(m1) > objective(m2)
        hi = np.where(better, m2, hi)
        lo = np.where(better, lo, m1)
    theta = 0.5 * (lo + hi)
    return objective(theta), theta


def _frame_terms(w_actual: np.ndarray, w_ideal: np.ndarray):
    # Tr(W_ideal^dag Rz(theta) V) = e^{-i theta/2} (V W^dag)_00 + e^{i theta/2} (V W^dag)_11
    m = w_actual @ np.swapaxes(w_ideal.conj(), -1, -2)
    return m[..., 0, 0], m[..., 1, 1]


def frame_fidelity(w_actual: np.ndarray, ideal: tuple[np.ndarray, np.ndarray],
                   nuclear_frame: bool = True):
    """Best two-qubit fidelity over an electron phase and a nuclear z-frame.

    ``w_actual`` has shape (2, ..., 2, 2): per-branch nuclear propagators
    including pulse phases, for a sequence returning the electron to its
    initial state. Returns (fidelity, electron_phase, nuclear_theta). With
    ``nuclear_frame=False`` theta is pinned to zero.
    """
    w_ideal = np.stack([np.asarray(ideal[0]), np.asarray(ideal[1])])
    w_ideal = w_ideal.reshape((2,) + (1,) * (w_actual.ndim - 3) + (2, 2))
    a, c = _frame_terms(w_actual, w_ideal)
    if nuclear_frame:
        total, theta = _best_frame(a, c)
    else:
        theta = np.zeros(a.shape[1:])
        total = np.abs(a[0] + c[0]) + np.abs(a[1] + c[1])
    fid = (total**2 / 4 + 1) / 5
    ph = np.exp(-1j * theta / 2)
    t0 = a[0] * ph + c[0] / ph
    t1 = a[1] * ph + c[1] / ph
    phi = np.angle(t0) - np.angle(t1)
    return np.minimum(fid, 1.0), np.angle(np.exp(1j * phi)), theta


# ---------------------------------------------------------------------------
# compilation


@dataclass(frozen=True)
class CompiledGate:
    spin_id: str
    kind: str
    tau_ns: float
    n_pulses: int
    fidelity: float
    objective: float
    sign: int = 1
    electron_phase: float = 0.0
    nuclear_phases: dict = field(default_factory=dict)
    resonance_order: int | None = None
    reference_tau_ns: float | None = None
    reference_n_pulses: int | None = None
    reference_order: int | None = None
    agreement: str = "no-reference"

    @property
    def spec(self) -> CpmgGateSpec:
        return CpmgGateSpec(self.tau_ns, self.n_pulses)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CompiledGate":
        return cls(**d)


def resonance_order(spin: NuclearSpin, reg: SpinRegister, tau_ns: float) -> int:
    """Nearest integer of 2 tau fbar, fbar = mean of the m_s=0 and m_s=-1 frequencies.

    Odd orders give conditional rotations, even orders unconditional ones.
    """
    fbar = 0.5 * (reg.larmor_khz + precession_frequencies(spin, reg)[1])
    return int(round(2 * tau_ns * fbar * KHZ_NS))


def resonance_tau(spin: NuclearSpin, reg: SpinRegister, order: int) -> float:
    fbar = 0.5 * (reg.larmor_khz + precession_frequencies(spin, reg)[1])
    return order / (2 * fbar * KHZ_NS)


def _agreement(order, ref_order, tau, ref_tau, n, ref_n) -> str:
    if ref_order is None:
        return "no-reference"
    if order != ref_order:
        return f"different-order ({order} vs {ref_order})"
    tag = "tau-within-2pct" if abs(tau - ref_tau) <= 0.02 * ref_tau else "tau-outside-2pct"
    n_tag = "same-N" if n == ref_n else f"N {n} vs {ref_n}"
    return f"same-order; {tag}; {n_tag}"


def default_search(target: GateTarget, reg: SpinRegister, order_span: int = 4) -> dict:
    """Search windows (+-3% in tau) around resonances near the published order.

    Conditional gates use the odd order closest to the published tau (5 when
    there is no reference) and the odd orders up to ``order_span`` above and
    below it, since no single order reaches the best fidelity for every spin;
    unconditional gates use the nearest even order and the next even order,
    since the rotation per pulse varies strongly between orders for weakly
    coupled spins.
    """
    spin = reg.spin(target.spin_id)
    kind = GateKind(target.kind)
    if kind is GateKind.Z_HALF:
        return {"tau_ranges": [(20, 400)], "n_range": (4, 4)}
    uncond = kind is GateKind.UNCONDITIONAL_X_HALF
    base_kind = "unconditional_x_half" if uncond else "conditional_x_half"
    ref = GATE_TABLE.get((target.spin_id, base_kind))
    ref_order = resonance_order(spin, reg, ref[0]) if ref is not None else (6 if uncond else 5)
    if uncond:
        base = ref_order + (ref_order % 2)
        orders = (base, base + 2)
        n_range = (4, 64)
    else:
        base = ref_order if ref_order % 2 else ref_order + 1
        orders = tuple(o for o in range(base - order_span, base + order_span + 1, 2) if o >= 1)
        n_range = (4, 32)
    windows = []
    for order in orders:
        tau0 = resonance_tau(spin, reg, order)
        windows.append((int(tau0 * 0.97), int(tau0 * 1.03) + 1))
    return {"tau_ranges": windows, "n_range": n_range}


def _grid(search: dict):
    tau_step = search.get("tau_step", 1.0)
    windows = search.get("tau_ranges") or [search["tau_range"]]
    taus = np.unique(np.concatenate([
        np.arange(lo, hi + 0.5 * tau_step, tau_step, dtype=float) for lo, hi in windows
    ]))
    n_lo, n_hi = search["n_range"]
    n_step = search.get("n_step", 2)
    ns = [n for n in range(int(n_lo), int(n_hi) + 1, int(n_step)) if n > 0]
    if taus.size == 0 or not ns:
        raise ValueError("empty search space")
    return taus, ns


def compile_gate(
    target: GateTarget,
    reg: SpinRegister,
    search: dict | None = None,
    fidelity_floor: float = 0.0,
    spectator_weight: float = 1.0,
    order_span: int = 4,
) -> CompiledGate:
    """Grid-search (tau, N) for a gate on one nucleus.

    Objective: frame-corrected target fidelity minus ``spectator_weight``
    times the summed infidelity of every other nucleus with respect to the
    identity. Ties break on (objective desc, N asc, tau asc). Odd N leaves
    the electron flipped and is skipped.

    ``search`` keys: ``tau_range`` or a list ``tau_ranges`` of (lo, hi)
    windows in ns (inclusive), ``n_range`` (inclusive), optional ``tau_step``
    (default 1 ns) and ``n_step`` (default 2). Without ``search`` the
    windows come from ``default_search`` with ``order_span``. z_half gates
    get no frame update on the target nucleus, so the rotation must come
    from the pulses.
    """
    target = GateTarget(target.kind, target.spin_id)
    spin = reg.spin(target.spin_id)
    search = dict(default_search(target, reg, order_span) if search is None else search)
    taus, ns = _grid(search)
    kind = target.kind
    fit_kind = GateKind.CONDITIONAL_X_HALF if kind is GateKind.CNOT_E_TO_N else kind
    signs = (1, -1) if fit_kind is GateKind.CONDITIONAL_X_HALF else (1,)
    spectators = [s for s in reg.spins if s.id != spin.id]
    eye = np.eye(2, dtype=complex)

    best = None
    for n in ns:
        if n % 2:
            continue
        pulses = CpmgGateSpec(1.0, n).pulses
        paths = electron_paths(pulses)
        phases = np.array([paths[0][1], paths[1][1]]).reshape(2, 1, 1, 1)
        w = branch_propagators(spin, reg, taus, n) * phases
        fid = np.full(taus.shape, -np.inf)
        sgn = np.ones(taus.shape, dtype=int)
        eph = np.zeros(taus.shape)
        nth = np.zeros(taus.shape)
        for s in signs:
            f, ph, th = frame_fidelity(w, ideal_blocks(fit_kind, s),
                                       nuclear_frame=fit_kind is not GateKind.Z_HALF)
            upd = f > fid
            fid = np.where(upd, f, fid)
            sgn = np.where(upd, s, sgn)
            eph = np.where(upd, ph, eph)
            nth = np.where(upd, th, nth)
        penalty = np.zeros(taus.shape)
        spec_th = {}
        for sp in spectators:
            ws = branch_propagators(sp, reg, taus, n) * phases
            fs, phs, ths = frame_fidelity(ws, (eye, eye))
            penalty += 1 - fs
            spec_th[sp.id] = ths
            # the electron phase is shared: branch phase offsets add over nuclei
            eph = eph + phs
        obj = fid - spectator_weight * penalty
        i = int(np.argmax(obj))  # first max -> smallest tau at this N
        cand = (float(obj[i]), n, float(taus[i]))
        if best is None or cand[0] > best[0][0]:
            best = (cand, float(fid[i]), int(sgn[i]), float(np.angle(np.exp(1j * eph[i]))),
                    {spin.id: float(nth[i]), **{k: float(v[i]) for k, v in spec_th.items()}})

    (obj, n, tau), fid, sgn, eph, nph = best
    order = resonance_order(spin, reg, tau)
    ref_key = "conditional_x_half" if kind is GateKind.CNOT_E_TO_N else kind.value
    ref = GATE_TABLE.get((spin.id, ref_key))
    ref_order = resonance_order(spin, reg, ref[0]) if ref else None
    result = CompiledGate(
        spin_id=spin.id,
        kind=kind.value,
        tau_ns=tau,
        n_pulses=n,
        fidelity=fid,
        objective=obj,
        sign=sgn,
        electron_phase=eph,
        nuclear_phases=nph,
        resonance_order=order,
        reference_tau_ns=float(ref[0]) if ref else None,
        reference_n_pulses=int(ref[1]) if ref else None,
        reference_order=ref_order,
        agreement=_agreement(order, ref_order, tau, ref[0] if ref else None, n, ref[1] if ref else None),
    )
    if fid < fidelity_floor:
        raise CompileError(
            f"best {kind.value} on spin {spin.id}: fidelity {fid:.4f} < floor {fidelity_floor}", result)
    return result


def frame_correction(gate: CompiledGate, reg: SpinRegister) -> np.ndarray:
    """Electron phase and nuclear z-frame updates applied after the pulse train."""
    ops = [electron_phase_gate(gate.electron_phase)]
    for s in reg.spins:
        ops.append(rz(gate.nuclear_phases.get(s.id, 0.0)))
    return kron(*ops)


def compiled_unitary(gate: CompiledGate, reg: SpinRegister) -> np.ndarray:
    """Full-register unitary of a compiled gate including its frame updates."""
    return frame_correction(gate, reg) @ cpmg_unitary(gate.spec, reg)


def cnot_from_conditional(
    spec_plus: CpmgGateSpec | CompiledGate,
    reg: SpinRegister,
    spin: str,
    threshold: float = 0.98,
) -> np.ndarray:
    """Electron-controlled NOT on ``spin`` from a conditional +-pi/2 x rotation.

    With U_c = exp(-i s pi/4 Z_e X_n) the identity
    CNOT = S_e · U_c(-) · Rx_n(pi/2), and X_e U_c(+) X_e = U_c(-), gives the
    CNOT up to exact single-qubit corrections. The corrections here are
    ideal; the pulse train is simulated on the electron + ``spin`` pair.
    Emits GateQualityWarning if the result is below ``threshold`` against CNOT.
    """
    sub = reg.subregister([spin])
    if isinstance(spec_plus, CompiledGate):
        gate = spec_plus
    else:
        gate = compile_gate(
            GateTarget(GateKind.CONDITIONAL_X_HALF, spin), sub,
            {"tau_range": (spec_plus.tau, spec_plus.tau), "n_range": (spec_plus.n_pulses, spec_plus.n_pulses)},
        )
    uc = compiled_unitary(gate, sub)
    x_e = kron(pauli("X"), np.eye(2))
    if gate.sign == 1:
        uc = x_e @ uc @ x_e
    s_e = kron(np.diag([1, 1j]), np.eye(2))
    cnot = s_e @ uc @ kron(np.eye(2), rx(np.pi / 2))
    f = gate_fidelity(cnot, ideal_gate(GateKind.CNOT_E_TO_N))
    if f < threshold:
        warnings.warn(f"CNOT on spin {spin} has fidelity {f:.4f} < {threshold}", GateQualityWarning)
    return cnot


# ---------------------------------------------------------------------------
# gate library


def library_key(spin_id: str, kind: str | GateKind) -> str:
    return f"{spin_id}:{GateKind(kind).value}"


def save_library(gates: Iterable[CompiledGate], path: str | Path) -> None:
    entries = {library_key(g.spin_id, g.kind): g.to_dict() for g in gates}
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_library(path: str | Path) -> dict[str, CompiledGate]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: CompiledGate.from_dict(v) for k, v in raw.items()}
