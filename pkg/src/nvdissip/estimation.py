"""Hyperfine-parameter estimation from nuclear free precession.

Ramsey-type signals give the nuclear precession frequency for each electron
level; an adaptive bisection over evolution times narrows each frequency,
and the two frequencies for m_s = +1 and m_s = -1 are inverted for
(A_zz, A_zx). Nuclear polarization is prepared with a conditional-rotation
circuit followed by an electron reset, and its quality is read off the
visibility of a Ramsey oscillation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .protocol import Circuit, NoiseModel, ProtocolSetup, circuit_unitary, optical_pump
from .qmath import expectation, kron, partial_trace, pauli, rx, seed_sequence
from .spin_model import (
    KHZ_NS,
    HyperfineParams,
    NuclearSpin,
    SpinRegister,
    nuclear_propagator,
    precession_frequencies,
)

# (|0> + i|1>)/sqrt(2): +y eigenstate
PLUS_Y = rx(-np.pi / 2) @ np.array([1, 0], dtype=complex)


class InconsistentFrequenciesError(ValueError):
    def __init__(self, residual: float):
        super().__init__(f"no real A_zx reproduces the frequency pair (A_zx^2 = {residual:.6g} kHz^2)")
        self.residual = residual


# ---------------------------------------------------------------------------
# Ramsey signals


def ramsey_signal(spin: NuclearSpin, reg: SpinRegister, electron_level: int, t_grid,
                  rho0: np.ndarray | None = None) -> np.ndarray:
    """Population of the nuclear +y state after free precession for ``t_grid`` ns.

    ``rho0`` is the initial nuclear state (default: pure +y). Since +y is
    orthogonal to every precession axis in the xz plane, the signal is
    (1 + r cos(2 pi f t))/2 for a state of Bloch length r along y.
    """
    rho0 = np.outer(PLUS_Y, PLUS_Y.conj()) if rho0 is None else np.asarray(rho0, dtype=complex)
    u = nuclear_propagator(electron_level, spin, reg, np.asarray(t_grid, dtype=float))
    rho_t = u @ rho0 @ np.swapaxes(u.conj(), -1, -2)
    py = np.outer(PLUS_Y, PLUS_Y.conj())
    return np.clip(np.real(np.einsum("...ij,ji->...", rho_t, py)), 0.0, 1.0)


def ramsey_oracle(spin: NuclearSpin, reg: SpinRegister, electron_level: int,
                  noise_sigma: float = 0.0, seed=None) -> Callable[[float], float]:
    """Signal 2P - 1 at one evolution time, optionally with Gaussian noise."""
    rng = np.random.default_rng(seed)

    def oracle(t_ns: float) -> float:
        v = 2 * float(ramsey_signal(spin, reg, electron_level, t_ns)) - 1
        if noise_sigma > 0:
            v += noise_sigma * rng.normal()
        return v

    return oracle


# ---------------------------------------------------------------------------
# adaptive estimation


@dataclass
class FrequencyEstimate:
    center: float  # kHz
    half_width: float  # kHz
    iterations: int
    history: list[float] = field(default_factory=list)  # half-widths, starting with the initial one
    times_ns: list[float] = field(default_factory=list)
    flagged: bool = False
    restarts: int = 0

    @property
    def interval(self) -> tuple[float, float]:
        return self.center - self.half_width, self.center + self.half_width


def _probe_time(lo: float, hi: float) -> tuple[float, int]:
    """Longest time at which cos(2 pi f t) is monotone on [lo, hi] with the
    window center at a zero crossing. Returns (t_ns, k)."""
    width = hi - lo
    k = int(np.floor(lo / width + 1e-12))
    return (k + 0.5) / ((lo + hi) * KHZ_NS), k


def _bisect(signal_oracle, lo: float, hi: float, iterations: int, est: FrequencyEstimate):
    probes = []
    for _ in range(iterations):
        t, k = _probe_time(lo, hi)
        s = signal_oracle(t)
        probes.append((t, s))
        mid = 0.5 * (lo + hi)
        # cos decreases across the window for even k, increases for odd k
        upper = (s < 0) if k % 2 == 0 else (s > 0)
        lo, hi = (mid, hi) if upper else (lo, mid)
        est.history.append(0.5 * (hi - lo))
    return lo, hi, probes


def _consistent(probes, lo: float, hi: float, tol: float) -> bool:
    """Every probe must match the final window's prediction up to its Lipschitz bound."""
    c, w = 0.5 * (lo + hi), 0.5 * (hi - lo)
    for t, s in probes:
        slack = 2 * np.pi * w * t * KHZ_NS + tol
        if abs(s - np.cos(2 * np.pi * c * t * KHZ_NS)) > slack:
            return False
    return True


def adaptive_estimate(signal_oracle: Callable[[float], float], init_range: tuple[float, float],
                      iterations: int, consistency_tol: float = 0.05, max_restarts: int = 3,
                      n_verify: int = 8) -> FrequencyEstimate:
    """Bisect a frequency interval with Ramsey measurements at growing times.

    Each probe time puts the window's center on a zero crossing of
    cos(2 pi f t) with the whole window on one monotone half-period, so the
    sign of the measured signal tells which half holds the frequency; the
    width halves every iteration. Afterwards every probe, plus ``n_verify``
    extra probes at geometrically spaced times, is checked against the
    final window. If one disagrees (by more than ``consistency_tol``
    beyond what the window allows) the truth was not inside the range: the
    estimate is flagged and restarted from a window three times wider.
    """
    lo0, hi0 = (float(x) for x in init_range)
    if not 0 <= lo0 < hi0:
        raise ValueError("init_range must satisfy 0 <= lo < hi")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    est = FrequencyEstimate(0.5 * (lo0 + hi0), 0.5 * (hi0 - lo0), 0, [0.5 * (hi0 - lo0)])
    lo, hi = lo0, hi0
    while True:
        lo_f, hi_f, probes = _bisect(signal_oracle, lo, hi, iterations, est)
        if iterations:
            # extra checks at geometric times resolve aliases the bisection cannot see
            t_short, t_long = 0.25 / ((hi - lo) * KHZ_NS), 0.125 / ((hi_f - lo_f) * KHZ_NS)
            probes += [(t, signal_oracle(t)) for t in np.geomspace(t_short, t_long, n_verify)]
        est.times_ns.extend(t for t, _ in probes)
        if _consistent(probes, lo_f, hi_f, consistency_tol) or est.restarts >= max_restarts:
            break
        est.flagged = True
        est.restarts += 1
        width = hi - lo
        lo, hi = max(lo - width, 0.0), hi + width
        est.history.append(0.5 * (hi - lo))
    est.center, est.half_width, est.iterations = 0.5 * (lo_f + hi_f), 0.5 * (hi_f - lo_f), iterations
    return est


# ---------------------------------------------------------------------------
# frequency inversion


def hyperfine_from_frequencies(f_plus: float, f_minus: float, larmor_khz: float,
                               tol: float = 1e-9) -> HyperfineParams:
    """Invert f_pm = sqrt(A_zx^2 + (A_zz +- f_L)^2) for (A_zz, A_zx >= 0).

    Raises ``InconsistentFrequenciesError`` when A_zx^2 comes out negative
    beyond ``tol`` relative to f_L^2.
    """
    if min(f_plus, f_minus) < 0 or larmor_khz <= 0:
        raise ValueError("frequencies must be non-negative and the Larmor frequency positive")
    a_zz = (f_plus**2 - f_minus**2) / (4 * larmor_khz)
    a_zx2 = 0.5 * (f_plus**2 + f_minus**2) - a_zz**2 - larmor_khz**2
    if a_zx2 < -tol * larmor_khz**2:
        raise InconsistentFrequenciesError(a_zx2)
    return HyperfineParams(float(a_zz), float(np.sqrt(max(a_zx2, 0.0))))


def hyperfine_jacobian(f_plus: float, f_minus: float, larmor_khz: float) -> np.ndarray:
    """d(A_zz, A_zx) / d(f_plus, f_minus)."""
    p = hyperfine_from_frequencies(f_plus, f_minus, larmor_khz)
    d_zz = np.array([f_plus, -f_minus]) / (2 * larmor_khz)
    if p.a_zx == 0:
        return np.array([d_zz, [np.nan, np.nan]])
    d_zx = (np.array([f_plus, f_minus]) - 2 * p.a_zz * d_zz) / (2 * p.a_zx)
    return np.array([d_zz, d_zx])


# ---------------------------------------------------------------------------
# polarization


def polarization_circuit(spin: str = "n") -> Circuit:
    """Swap-style transfer of electron polarization onto one nucleus.

    Ry_e(pi/2), conditional rotation, Rx_e(pi/2), Rz_n(pi/2), conditional
    rotation. Starting from electron |0>, the nucleus ends in |0> whatever
    its initial state; the electron carries the entropy away at the next
    optical reset.
    """
    h = np.pi / 2
    return Circuit.of(("RY", "e", h), ("CROT", "e", spin), ("RX", "e", h), ("RZ", spin, h),
                      ("CROT", "e", spin))


def polarize(rho: np.ndarray, setup: ProtocolSetup, spin_label: str = "n1",
             noise: NoiseModel = NoiseModel()) -> np.ndarray:
    """Run the polarization circuit on a full register state and reset the electron."""
    u = circuit_unitary(polarization_circuit(spin_label), setup.layout, setup.n_qubits, setup.backend)
    return optical_pump(u @ rho @ u.conj().T, noise)


def nuclear_bloch(rho: np.ndarray, index: int, n_qubits: int) -> np.ndarray:
    red = partial_trace(rho, [index], [2] * n_qubits)
    return np.array([expectation(red, pauli(a)) for a in "XYZ"])


def visibility(p_max: float, p_min: float) -> float:
    """(p_max - p_min) / (p_max + p_min)."""
    if not (p_max >= p_min >= 0 and p_max > 0):
        raise ValueError("need p_max >= p_min >= 0 and p_max > 0")
    return (p_max - p_min) / (p_max + p_min)


def polarization_fidelity(v: float) -> float:
    """(1 + V) / 2."""
    return 0.5 * (1 + v)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class CosineFit:
    amplitude: float
    frequency_khz: float
    phase: float
    offset: float
    fallback: bool = False

    def __call__(self, t_ns):
        return self.offset + self.amplitude * np.cos(2 * np.pi * self.frequency_khz * np.asarray(t_ns) * KHZ_NS + self.phase)

    @property
    def p_max(self) -> float:
        return self.offset + abs(self.amplitude)

    @property
    def p_min(self) -> float:
        return self.offset - abs(self.amplitude)


def fft_frequency(t_ns: Sequence[float], y: Sequence[float], pad: int = 8) -> tuple[float, float]:
    """Peak frequency (kHz) of the mean-removed signal and the bin width (kHz), uniform grid."""
    t = np.asarray(t_ns, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt):
        raise ValueError("FFT estimate needs a uniform time grid")
    n = pad * t.size
    spec = np.abs(np.fft.rfft(y - y.mean(), n))
    freqs = np.fft.rfftfreq(n, dt * KHZ_NS)
    spec[0] = 0
    return float(freqs[np.argmax(spec)]), float(1 / (t.size * dt * KHZ_NS))


def fit_cosine(t_ns: Sequence[float], y: Sequence[float]) -> CosineFit:
    """Least-squares cosine fit seeded from the FFT peak; falls back to the FFT estimate."""
    t = np.asarray(t_ns, dtype=float)
    y = np.asarray(y, dtype=float)
    f0, bin_width = fft_frequency(t, y)
    if np.ptp(y) < 1e-12:
        return CosineFit(0.0, 0.0, 0.0, float(y.mean()), fallback=True)
    arg = 2 * np.pi * f0 * t * KHZ_NS
    design = np.column_stack([np.ones_like(arg), np.cos(arg), np.sin(arg)])
    (c, a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    p0 = [float(np.hypot(a, b)), f0, float(np.arctan2(-b, a)), float(c)]

    def model(tt, amp, f, ph, off):
        return off + amp * np.cos(2 * np.pi * f * tt * KHZ_NS + ph)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, _ = curve_fit(model, t, y, p0=p0, maxfev=10_000)
        if not np.all(np.isfinite(popt)):
            raise RuntimeError("non-finite fit")
    except (RuntimeError, ValueError):
        return CosineFit(*p0, fallback=True)
    amp, f, ph, off = popt
    if abs(f) < bin_width:
        # an unresolved oscillation is not a fit
        return CosineFit(*p0, fallback=True)
    if amp < 0:
        amp, ph = -amp, ph + np.pi
    return CosineFit(float(amp), float(f), float(np.angle(np.exp(1j * ph))), float(off))


def polarization_from_ramsey(t_ns, p_y) -> tuple[float, CosineFit]:
    """Polarization fidelity from the fitted Ramsey visibility."""
    fit = fit_cosine(t_ns, p_y)
    return polarization_fidelity(visibility(fit.p_max, max(fit.p_min, 0.0))), fit


@dataclass
class PolarizationRamsey:
    times_ns: np.ndarray
    population: np.ndarray
    fidelity: float
    fit: CosineFit
    bloch_after_polarization: np.ndarray


def simulate_polarization_ramsey(setup: ProtocolSetup, reg: SpinRegister, times_ns,
                                 noise: NoiseModel = NoiseModel(), spin_label: str = "n1") -> PolarizationRamsey:
    """Polarize, rotate into the transverse plane, precess, map onto the electron.

    Every nuclear gate goes through ``setup.backend`` (ideal or compiled on
    ``reg``); the free precession runs with the electron in |0>. Other
    nuclei start maximally mixed. The returned population is that of the
    prepared transverse state (Rx(pi/2)|0>), read as <Z_e> after a
    controlled-Y mapping, and the fidelity follows from the fitted visibility.
    """
    from .spin_model import conditional_free_evolution

    n = setup.n_qubits
    if n != reg.n_qubits:
        raise ValueError("setup and register sizes differ")
    rho = kron(np.diag([1.0, 0.0]).astype(complex), np.eye(2 ** (n - 1)) / 2 ** (n - 1))
    rho = polarize(rho, setup, spin_label, noise)
    bloch = nuclear_bloch(rho, setup.layout[spin_label], n)
    q = spin_label
    rot = circuit_unitary(Circuit.of(("RX", q, np.pi / 2)), setup.layout, n, setup.backend)
    rho = rot @ rho @ rot.conj().T
    readout = circuit_unitary(Circuit.of(("H", "e"), ("SDG", q), ("CNOT", "e", q), ("S", q), ("H", "e")),
                              setup.layout, n, setup.backend)
    z_e = kron(pauli("Z"), np.eye(2 ** (n - 1)))
    times = np.asarray(times_ns, dtype=float)
    pop = np.empty(times.size)
    for k, t in enumerate(times):
        u = readout @ conditional_free_evolution(reg, t)
        # <Z_e> = <Y_n>; Rx(pi/2)|0> points along -y
        pop[k] = 0.5 * (1 - expectation(u @ rho @ u.conj().T, z_e))
    fid, fit = polarization_from_ramsey(times, pop)
    return PolarizationRamsey(times, pop, fid, fit, bloch)


# ---------------------------------------------------------------------------
# end-to-end estimation and reporting


@dataclass
class SpinEstimate:
    spin_id: str
    a_zz_khz: float
    a_zx_khz: float
    a_zz_unc_khz: float
    a_zx_unc_khz: float
    f_plus_khz: float
    f_minus_khz: float
    iterations: int
    residual_a_zz_khz: float  # estimate minus reference
    residual_a_zx_khz: float
    flagged: bool


def estimate_spin(spin: NuclearSpin, reg: SpinRegister, iterations: int = 10,
                  init_half_width_khz: float = 50.0, prior: HyperfineParams | None = None,
                  noise_sigma: float = 0.0, seed=None) -> SpinEstimate:
    """Adaptive f_+ / f_- estimation for one spin followed by inversion.

    Search windows are centred on the frequencies predicted by ``prior``
    (default: the spin's own parameters rounded to 10 kHz).
    """
    if prior is None:
        prior = HyperfineParams(round(spin.params.a_zz, -1), round(spin.params.a_zx, -1))
    pred = precession_frequencies(NuclearSpin(spin.id, prior), reg)
    seeds = seed_sequence(seed).spawn(2)
    ests = []
    for ms, f_pred, ss in zip((1, -1), pred, seeds):
        oracle = ramsey_oracle(spin, reg, ms, noise_sigma, ss)
        lo = max(f_pred - init_half_width_khz, 0.0)
        ests.append(adaptive_estimate(oracle, (lo, f_pred + init_half_width_khz), iterations))
    fp, fm = ests[0].center, ests[1].center
    params = hyperfine_from_frequencies(fp, fm, reg.larmor_khz)
    jac = hyperfine_jacobian(fp, fm, reg.larmor_khz)
    # half-widths treated as uniform errors: sigma = w / sqrt(3)
    sig_f = np.array([ests[0].half_width, ests[1].half_width]) / np.sqrt(3)
    unc = np.sqrt((jac**2) @ sig_f**2)
    return SpinEstimate(spin.id, params.a_zz, params.a_zx, float(unc[0]), float(unc[1]), fp, fm,
                        min(e.iterations for e in ests), params.a_zz - spin.params.a_zz,
                        params.a_zx - spin.params.a_zx, any(e.flagged for e in ests))


def write_report(estimates: Sequence[SpinEstimate], path: str | Path, extra: dict | None = None) -> None:
    payload = {"spins": [asdict(e) for e in estimates]}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> list[SpinEstimate]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SpinEstimate(**e) for e in d["spins"]]
