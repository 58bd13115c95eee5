"""Nuclear-state tomography through the electron readout.

Each two-nucleus Pauli setting is mapped onto the electron with a
controlled-Pauli (phase kickback) circuit and read out by repeated
single-shot electron measurements. Raw populations are rescaled by the
electron Rabi contrast, and a maximum-likelihood fit returns a physical
density matrix.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .protocol import Circuit, GHZ, IdealBackend, circuit_unitary
from .qmath import (
    expectation,
    fidelity_with_pure,
    kron,
    pauli,
    seed_sequence,
    pauli_string,
    rz,
    embed,
    validate_density_matrix,
)

SIGMA_FLOOR = 1e-4

# Reconstructed two-nucleus state after one protocol round (real + i*imag).
_MEASURED_REAL = np.array([
    [0.3706, -0.0033, -0.0263, 0.2260],
    [-0.0033, 0.1502, 0.0096, 0.0177],
    [-0.0263, 0.0096, 0.1446, 0.0462],
    [0.2260, 0.0177, 0.0462, 0.3346],
])
_MEASURED_IMAG = np.array([
    [0.0000, 0.0109, 0.0214, -0.0273],
    [-0.0109, 0.0000, -0.0136, -0.0095],
    [-0.0214, 0.0136, 0.0000, 0.0047],
    [0.0273, 0.0095, -0.0047, 0.0000],
])
MEASURED_RHO = _MEASURED_REAL + 1j * _MEASURED_IMAG
MEASURED_RHO.setflags(write=False)

SETTINGS = tuple(a + b for a, b in product("IXYZ", repeat=2) if a + b != "II")


@dataclass(frozen=True)
class ReadoutModel:
    """Electron single-shot readout.

    ``fidelity_0`` / ``fidelity_1`` are P(read 0 | |0>) and P(read 1 | |1>);
    both default to ``avg_readout_fidelity``. ``rabi_pmax`` / ``rabi_pmin``
    are the raw populations at the Rabi extremes and default to the values
    this flip model produces (fidelity_0 and 1 - fidelity_1).
    """

    avg_readout_fidelity: float = 0.765
    shots: int = 5000
    rabi_pmax: float | None = None
    rabi_pmin: float | None = None
    fidelity_0: float | None = None
    fidelity_1: float | None = None

    def __post_init__(self):
        if not 0.5 < self.avg_readout_fidelity <= 1:
            raise ValueError("avg_readout_fidelity must lie in (0.5, 1]")
        if int(self.shots) != self.shots or self.shots < 1:
            raise ValueError("shots must be a positive integer")
        f0 = self.avg_readout_fidelity if self.fidelity_0 is None else self.fidelity_0
        f1 = self.avg_readout_fidelity if self.fidelity_1 is None else self.fidelity_1
        for f in (f0, f1):
            if not 0 <= f <= 1:
                raise ValueError("readout fidelities must lie in [0, 1]")
        object.__setattr__(self, "fidelity_0", float(f0))
        object.__setattr__(self, "fidelity_1", float(f1))
        if self.rabi_pmax is None:
            object.__setattr__(self, "rabi_pmax", float(f0))
        if self.rabi_pmin is None:
            object.__setattr__(self, "rabi_pmin", float(1 - f1))
        if not 0 <= self.rabi_pmin < self.rabi_pmax <= 1:
            raise ValueError(f"need 0 <= pmin < pmax <= 1, got {self.rabi_pmin}, {self.rabi_pmax}")

    @property
    def contrast_factor(self) -> float:
        """f = 1 / (pmax - pmin)."""
        return 1.0 / (self.rabi_pmax - self.rabi_pmin)

    def p_read0(self, p_ideal):
        """Probability of reading 0 given the true |0> population."""
        return self.fidelity_0 * p_ideal + (1 - self.fidelity_1) * (1 - np.asarray(p_ideal))


def simulate_readout(p_ideal: float, model: ReadoutModel, seed=None) -> tuple[float, tuple[int, int]]:
    """Bernoulli readout with per-shot flips. Returns (p0_raw, (n0, n1)).

    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    if not 0 <= p_ideal <= 1:
        raise ValueError(f"p_ideal must lie in [0, 1], got {p_ideal}")
    rng = np.random.default_rng(seed)
    n0 = int(rng.binomial(model.shots, model.p_read0(p_ideal)))
    return n0 / model.shots, (n0, model.shots - n0)


def rabi_normalize(p0_raw, model: ReadoutModel):
    """Map a raw |0> population to an expectation using the Rabi extremes."""
    span = model.rabi_pmax - model.rabi_pmin
    if span <= 0:
        raise ValueError("degenerate Rabi contrast")
    return 2 * (np.asarray(p0_raw) - model.rabi_pmin) / span - 1


def error_bar(p0, shots: int, f: float):
    """sigma = 2 f sqrt(p0 (1 - p0) / N) for a contrast-normalized expectation."""
    p0 = np.asarray(p0, dtype=float)
    if np.any((p0 < 0) | (p0 > 1)):
        raise ValueError("p0 must lie in [0, 1]")
    if shots < 1 or f <= 0:
        raise ValueError("shots must be >= 1 and f > 0")
    return 2 * f * np.sqrt(p0 * (1 - p0) / shots)


def measure_expectation(value: float, model: ReadoutModel, seed=None) -> tuple[float, float, float]:
    """Simulated readout of an electron <Z>: returns (normalized, sigma, p0_raw)."""
    p = float(np.clip((1 + value) / 2, 0, 1))
    p0, _ = simulate_readout(p, model, seed)
    return float(rabi_normalize(p0, model)), float(error_bar(p0, model.shots, model.contrast_factor)), p0


# ---------------------------------------------------------------------------
# tomography circuits

_MAP_PRE = {"X": (), "Y": ("SDG",), "Z": ("H",)}
_MAP_POST = {"X": (), "Y": ("S",), "Z": ("H",)}


def mapping_circuit(setting: str) -> Circuit:
    """Electron-controlled P1 (n1) and P2 (n2) between two electron Hadamards.

    With the electron starting in |0>, the final <Z_e> equals <P1 ⊗ P2> of
    the nuclei. Controlled-Y and controlled-Z are CNOTs dressed by S and H.
    """
    setting = setting.upper()
    if len(setting) != 2 or setting not in SETTINGS:
        raise ValueError(f"unknown tomography setting {setting!r}")
    specs = [("H", "e")]
    for label, q in zip(setting, ("n1", "n2")):
        if label == "I":
            continue
        specs += [(g, q) for g in _MAP_PRE[label]]
        specs.append(("CNOT", "e", q))
        specs += [(g, q) for g in _MAP_POST[label]]
    specs.append(("H", "e"))
    return Circuit.of(*specs)


def tomography_circuits() -> list[tuple[str, Circuit]]:
    """The 15 non-identity two-qubit Pauli settings with their mapping circuits."""
    return [(s, mapping_circuit(s)) for s in SETTINGS]


def _z_e(n_qubits: int) -> np.ndarray:
    return embed(pauli("Z"), [0], n_qubits)


def mapped_expectations(rho: np.ndarray, setup=None, settings: Sequence[str] = SETTINGS,
                        pre: np.ndarray | None = None) -> dict[str, float]:
    """<Z_e> after each mapping circuit applied to a full register state.

    ``setup`` is a ``protocol.ProtocolSetup`` (default: three ideal qubits)
    and ``pre`` an optional unitary applied before every mapping circuit.
    """
    from .protocol import ideal_setup

    setup = ideal_setup() if setup is None else setup
    n = setup.n_qubits
    if pre is not None:
        rho = pre @ rho @ pre.conj().T
    z = _z_e(n)
    cache = setup._cache.setdefault("tomo", {})
    out = {}
    for s in settings:
        if s not in cache:
            cache[s] = circuit_unitary(mapping_circuit(s), setup.layout, n, setup.backend)
        u = cache[s]
        out[s] = expectation(u @ rho @ u.conj().T, z)
    return out


@dataclass(frozen=True)
class TomographyRecord:
    basis: str
    p0_raw: float
    expectation: float
    sigma: float

    def __post_init__(self):
        if self.basis not in SETTINGS:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


RECORD_HEADER = ("basis", "p0_raw", "expectation", "sigma")


def write_records(records: Iterable[TomographyRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.basis, f"{r.p0_raw:.12g}", f"{r.expectation:.12g}", f"{r.sigma:.12g}"])


def read_records(path: str | Path) -> list[TomographyRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [TomographyRecord(row["basis"], float(row["p0_raw"]), float(row["expectation"]),
                                 float(row["sigma"])) for row in reader]


def exact_records(rho_n: np.ndarray, setup=None) -> list[TomographyRecord]:
    """Noise-free records (sigma = 0) from the ideal or compiled mapping circuits."""
    from .protocol import ideal_setup

    setup = ideal_setup() if setup is None else setup
    full = setup.embed_nuclear_state(validate_density_matrix(rho_n))
    ev = mapped_expectations(full, setup)
    return [TomographyRecord(s, (1 + v) / 2, v, 0.0) for s, v in ev.items()]


def simulate_tomography(rho_n: np.ndarray, model: ReadoutModel, seed=None, setup=None) -> list[TomographyRecord]:
    """Shot-noise tomography: one independent RNG stream per setting."""
    exact = exact_records(rho_n, setup)
    streams = seed_sequence(seed).spawn(len(exact))
    out = []
    for rec, ss in zip(exact, streams):
        e, sig, p0 = measure_expectation(rec.expectation, model, ss)
        out.append(TomographyRecord(rec.basis, p0, e, sig))
    return out


def records_to_correlations(records: Iterable[TomographyRecord]) -> dict[str, TomographyRecord]:
    table = {r.basis: r for r in records}
    missing = set(SETTINGS) - set(table)
    if missing:
        raise ValueError(f"records lack settings {sorted(missing)}")
    return table


def witness_from_records(records: Iterable[TomographyRecord]) -> tuple[float, float]:
    """GHZ witness fidelity and its propagated standard error."""
    t = records_to_correlations(records)
    xx, yy, zz = (t[b].expectation for b in ("XX", "YY", "ZZ"))
    f = 0.5 - 0.25 * (1 - xx + yy - zz)
    sigma = 0.25 * float(np.sqrt(sum(t[b].sigma**2 for b in ("XX", "YY", "ZZ"))))
    return f, sigma


# ---------------------------------------------------------------------------
# maximum likelihood


class MLEConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MLEResult:
    rho: np.ndarray
    converged: bool
    iterations: int
    residual: float  # gradient max-norm at exit
    loss: float


def linear_inversion(records: Iterable[TomographyRecord]) -> np.ndarray:
    t = records_to_correlations(records)
    rho = np.eye(4, dtype=complex) / 4
    for s in SETTINGS:
        rho += t[s].expectation * pauli_string(s) / 4
    return rho


def _project_psd(rho: np.ndarray, floor: float = 1e-9) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, floor, None)
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real


_TRIL = np.tril_indices(4)
_OFF = np.tril_indices(4, -1)


def _unpack(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_OFF] = x[4:10] + 1j * x[10:16]
    return t


def _pack(t: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(np.diag(t)), t[_OFF].real, t[_OFF].imag])


def mle_reconstruct(records: Iterable[TomographyRecord], return_info: bool = False,
                    gtol: float = 1e-9, maxiter: int = 10_000):
    """Weighted least-squares (Gaussian likelihood) fit over physical states.

    rho = T T^dag / Tr(T T^dag) with lower-triangular T, minimized with
    L-BFGS from the PSD-projected linear inversion. Weights are 1/sigma^2
    (sigma floored at 1e-4, so exact records are weighted uniformly).
    Non-convergence emits ``MLEConvergenceWarning`` with the residual.
    """
    table = records_to_correlations(records)
    paulis = np.array([pauli_string(s) for s in SETTINGS])
    e = np.array([table[s].expectation for s in SETTINGS])
    sig = np.array([max(table[s].sigma, SIGMA_FLOOR) for s in SETTINGS])
    w = 1 / sig**2
    w = w / w.max()

    def loss_grad(x):
        t = _unpack(x)
        a = t @ t.conj().T
        tr = np.trace(a).real
        rho = a / tr
        pred = np.einsum("kij,ji->k", paulis, rho).real
        r = pred - e
        loss = float(np.sum(w * r**2))
        g_rho = np.einsum("k,kij->ij", 2 * w * r, paulis)
        m = (g_rho - np.trace(g_rho @ rho).real * np.eye(4)) / tr
        # L = Tr(M T T^dag): dL/dRe T = 2 Re (M T), dL/dIm T = 2 Im (M T)
        g = 2 * (m @ t)
        grad = np.concatenate([g[np.diag_indices(4)].real, g[_OFF].real, g[_OFF].imag])
        return loss, grad

    rho0 = _project_psd(linear_inversion(table.values()))
    x0 = _pack(np.linalg.cholesky(rho0))
    res = minimize(loss_grad, x0, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "ftol": 1e-16, "maxiter": maxiter, "maxcor": 30})
    t = _unpack(res.x)
    rho = t @ t.conj().T
    rho = rho / np.trace(rho).real
    rho = 0.5 * (rho + rho.conj().T)
    residual = float(np.max(np.abs(res.jac)))
    converged = bool(res.success) or residual < gtol
    if not converged:
        warnings.warn(f"MLE did not converge after {res.nit} iterations (gradient {residual:.2e})",
                      MLEConvergenceWarning, stacklevel=2)
    info = MLEResult(rho, converged, int(res.nit), residual, float(res.fun))
    return (rho, info) if return_info else rho


# ---------------------------------------------------------------------------
# readout calibration

_SIGNS = np.array([[1, a, b, a * b] for a in (1, -1) for b in (1, -1)], dtype=float)  # rows: outcomes ++,+-,-+,--


def _check_confusion(c: np.ndarray, dim: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (dim, dim):
        raise ValueError(f"confusion matrix must be {dim}x{dim}")
    if np.linalg.cond(c) > 1e12:
        raise ValueError("confusion matrix is singular")
    return c


def single_qubit_correction(c2: np.ndarray) -> np.ndarray:
    """2x2 matrix acting on (1, <P>) that undoes a readout confusion.

    ``c2[i, j]`` = P(read outcome i | true outcome j), outcome 0 meaning +1.
    """
    c2 = _check_confusion(c2, 2)
    s = np.array([[1, 1], [1, -1]], dtype=float)  # (1, E) -> 2 * (p+, p-)
    return s @ np.linalg.inv(c2) @ s / 2


def two_qubit_correction(c4: np.ndarray) -> np.ndarray:
    """4x4 matrix acting on (1, <P1>, <P2>, <P1P2>) that undoes a joint confusion."""
    c4 = _check_confusion(c4, 4)
    return _SIGNS.T @ np.linalg.inv(c4) @ _SIGNS / 4


def marginal_confusion(c4: np.ndarray, qubit: int) -> np.ndarray:
    """Single-qubit confusion of ``c4`` averaged over the other qubit's true value."""
    c = np.asarray(c4, dtype=float).reshape(2, 2, 2, 2)  # (read a, read b, true a, true b)
    if qubit == 0:
        return c.sum(axis=1).mean(axis=2)
    return c.sum(axis=0).mean(axis=1)


def readout_calibrate(records: Iterable[TomographyRecord], confusion) -> list[TomographyRecord]:
    """Undo readout confusion in normalized expectations.

    A 2x2 confusion acts on every mapped +-1 outcome. A 4x4 confusion acts
    on the joint outcome distribution of each two-body setting, rebuilt from
    its one- and two-body expectations; one-body settings use its marginals.
    Sigmas are propagated linearly.
    """
    table = records_to_correlations(records)
    c = np.asarray(confusion, dtype=float)
    out = {}
    if c.shape == (2, 2):
        m = single_qubit_correction(c)
        for s, r in table.items():
            e = m[1, 0] + m[1, 1] * r.expectation
            out[s] = replace(r, expectation=float(e), sigma=float(abs(m[1, 1]) * r.sigma))
    elif c.shape == (4, 4):
        m4 = two_qubit_correction(c)
        m1 = [single_qubit_correction(marginal_confusion(c, q)) for q in (0, 1)]
        for s, r in table.items():
            if "I" in s:
                q = 0 if s[1] == "I" else 1
                m = m1[q]
                out[s] = replace(r, expectation=float(m[1, 0] + m[1, 1] * r.expectation),
                                 sigma=float(abs(m[1, 1]) * r.sigma))
                continue
            parts = [table[s[0] + "I"], table["I" + s[1]], r]
            v = np.array([1.0] + [p.expectation for p in parts])
            sig = np.array([p.sigma for p in parts])
            e = m4[3] @ v
            out[s] = replace(r, expectation=float(e), sigma=float(np.sqrt(np.sum((m4[3, 1:] * sig) ** 2))))
    else:
        raise ValueError("confusion matrix must be 2x2 or 4x4")
    return [out[s] for s in SETTINGS]


def symmetric_confusion(eps: float, qubits: int = 1) -> np.ndarray:
    """Product confusion with flip probability ``eps`` on each qubit."""
    c = np.array([[1 - eps, eps], [eps, 1 - eps]])
    return c if qubits == 1 else np.kron(c, c)


# ---------------------------------------------------------------------------
# density-matrix I/O


def rho_to_json(rho: np.ndarray, path: str | Path, extra: Mapping | None = None) -> None:
    rho = np.asarray(rho, dtype=complex)
    payload = {"real": rho.real.tolist(), "imag": rho.imag.tolist()}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def rho_from_json(path: str | Path) -> np.ndarray:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return np.array(d["real"], dtype=float) + 1j * np.array(d["imag"], dtype=float)


def ghz_fidelity(rho_n: np.ndarray) -> float:
    return fidelity_with_pure(rho_n, GHZ)


# ---------------------------------------------------------------------------
# phase scan of the GHZ coherence


SCAN_BASES = ("XX", "YY", "XY", "YX")


@dataclass
class PhaseScan:
    times_ns: np.ndarray
    ideal: dict[str, np.ndarray]
    crosstalk: dict[str, np.ndarray]
    compensated: dict[str, np.ndarray]
    frequency_khz: float
    compensation_rad: float
    offsets_deg: dict[str, float]  # after compensation
    raw_offsets_deg: dict[str, float]
    contrast_ideal: dict[str, float]
    contrast_crosstalk: dict[str, float]


def fit_phase(t_ns: np.ndarray, y: np.ndarray, f_khz: float) -> tuple[float, float, float]:
    """Least-squares y = c + A cos(2 pi f t + phi) at known f. Returns (A, phi, c)."""
    arg = 2 * np.pi * f_khz * np.asarray(t_ns) * 1e-6
    design = np.column_stack([np.ones_like(arg), np.cos(arg), np.sin(arg)])
    (c, a, b), *_ = np.linalg.lstsq(design, np.asarray(y), rcond=None)
    return float(np.hypot(a, b)), float(np.arctan2(-b, a)), float(c)


def simulate_tomography_phase_scan(reg, times_ns: Sequence[float], crosstalk_setup=None,
                                   bases: Sequence[str] = SCAN_BASES) -> PhaseScan:
    """Mapped expectations of an ideally prepared GHZ pair versus waiting time.

    Both nuclei precess freely (electron in |0>) before tomography. The
    ideal curves use exact mapping circuits; the cross-talk curves use
    ``crosstalk_setup`` (compiled gates on ``reg``). A single nuclear
    z-frame offset on n1 is fitted so the compensated cross-talk curves
    line up with the ideal ones. Without a cross-talk setup the ideal
    gates are used throughout and the compensation is zero.
    """
    from .protocol import ProtocolSetup, IdealBackend
    from .spin_model import conditional_free_evolution

    times = np.asarray(times_ns, dtype=float)
    if crosstalk_setup is None:
        layout = {"e": 0, "n1": 1, "n2": 2}
        ideal_su = ProtocolSetup(reg.n_qubits, {**layout}, IdealBackend()) if reg.n_qubits == 3 else None
        if ideal_su is None:
            raise ValueError("ideal scan needs a two-nucleus register")
        crosstalk_setup = ideal_su
        trivial = True
    else:
        ideal_su = ProtocolSetup(reg.n_qubits, dict(crosstalk_setup.layout), IdealBackend())
        trivial = False
    f_khz = 2 * reg.larmor_khz
    rho_ghz = ideal_su.embed_nuclear_state(np.outer(GHZ, GHZ.conj()))
    evols = [conditional_free_evolution(reg, t) for t in times]
    states = [u @ rho_ghz @ u.conj().T for u in evols]

    def curves(setup, pre=None):
        out = {b: np.empty(times.size) for b in bases}
        for k, st in enumerate(states):
            ev = mapped_expectations(st, setup, bases, pre)
            for b in bases:
                out[b][k] = ev[b]
        return out

    ideal = curves(ideal_su)
    cross = ideal if trivial else curves(crosstalk_setup)
    fits_i = {b: fit_phase(times, ideal[b], f_khz) for b in bases}
    fits_c = {b: fit_phase(times, cross[b], f_khz) for b in bases}
    raw = {b: float(np.degrees(_wrap(fits_c[b][1] - fits_i[b][1]))) for b in bases}
    if trivial:
        comp = 0.0
        compensated = cross
        after = raw
    else:
        # A z-frame shift delta on n1 shifts every GHZ-coherence curve by the same phase.
        weights = np.array([fits_c[b][0] for b in bases])
        shifts = np.array([_wrap(fits_c[b][1] - fits_i[b][1]) for b in bases])
        mean_shift = float(np.angle(np.sum(weights * np.exp(1j * shifts))))
        comp = mean_shift
        n1 = crosstalk_setup.layout["n1"]
        # Rz(-delta) on n1 advances the |00><11| coherence phase by +delta
        pre = embed(rz(-comp), [n1], crosstalk_setup.n_qubits)
        compensated = curves(crosstalk_setup, pre)
        fits_p = {b: fit_phase(times, compensated[b], f_khz) for b in bases}
        after = {b: float(np.degrees(_wrap(fits_p[b][1] - fits_i[b][1]))) for b in bases}
    return PhaseScan(times, ideal, cross, compensated, f_khz, comp, after, raw,
                     {b: fits_i[b][0] for b in bases}, {b: fits_c[b][0] for b in bases})


def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi
