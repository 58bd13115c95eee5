"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line (run with -s to see them)."""

import time

import numpy as np

from nvdissip import channels, estimation, measurement, protocol, pulse
from nvdissip.protocol import GHZ, NoiseModel, run_protocol
from nvdissip.qmath import (
    fidelity_with_pure,
    is_density_matrix,
    ket,
    maximally_mixed,
    pauli_string,
    projector,
    random_density_matrix,
    trace_distance,
)
from nvdissip.spin_model import HYPERFINE_TABLE, effective_hamiltonian, precession_frequencies, reference_register

BELL = [GHZ, (ket("00") - ket("11")) / np.sqrt(2), (ket("01") + ket("10")) / np.sqrt(2),
        (ket("01") - ket("10")) / np.sqrt(2)]


def verdict(number, ok, detail):
    print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_channel_fixed_point():
    rng = np.random.default_rng(1)
    ez, ex = channels.build_Ez(), channels.build_Ex()
    start = time.perf_counter()
    worst = min(fidelity_with_pure(channels.apply_channel(ex, channels.apply_channel(ez, random_density_matrix(4, rng))), GHZ)
                for _ in range(100))
    elapsed = time.perf_counter() - start
    verdict(1, worst >= 1 - 1e-10 and elapsed < 1, f"min F = {worst:.12f}, {elapsed:.3f} s")


def test_criterion_02_kraus_completeness():
    layout = protocol.ideal_setup().layout
    extracted = [channels.channel_from_circuit(protocol.circuit_unitary(c, layout, 3), 2, ket("0"))
                 for c in (protocol.sequence1_circuit(), protocol.sequence2_circuit())]
    residuals = [ch.completeness_residual() for ch in [channels.build_Ex(), channels.build_Ez(), *extracted]]
    verdict(2, max(residuals) <= 1e-12, f"max residual = {max(residuals):.2e}")


def test_criterion_03_heisenberg_conjugation():
    layout = protocol.ideal_setup().layout
    errs = []
    for circuit, target in ((protocol.sequence1_circuit(), "IZZ"), (protocol.sequence2_circuit(), "IXX")):
        u = protocol.circuit_unitary(circuit, layout, 3)
        errs.append(np.max(np.abs(u @ pauli_string("ZII") @ u.conj().T - pauli_string(target))))
    verdict(3, max(errs) <= 1e-12, f"max deviation = {max(errs):.2e}")


def test_criterion_04_measured_state():
    f_direct = fidelity_with_pure(measurement.MEASURED_RHO, GHZ)
    rho = measurement.mle_reconstruct(measurement.exact_records(measurement.MEASURED_RHO))
    dist = trace_distance(rho, measurement.MEASURED_RHO)
    verdict(4, abs(f_direct - 0.579) <= 1e-3 and dist < 1e-3, f"F = {f_direct:.4f}, MLE trace distance = {dist:.2e}")


def test_criterion_05_frequency_formula():
    reg = reference_register()
    start = time.perf_counter()
    worst = 0.0
    for spin in HYPERFINE_TABLE:
        f = precession_frequencies(spin, reg)
        for ms, fk in zip((1, -1), f):
            lam = np.linalg.eigvalsh(effective_hamiltonian(ms, spin, reg))
            worst = max(worst, abs(2 * np.pi * fk - (lam[1] - lam[0])) / (lam[1] - lam[0]))
    elapsed = time.perf_counter() - start
    verdict(5, worst <= 1e-9 and elapsed < 0.1, f"max relative error = {worst:.2e}, {elapsed * 1e3:.1f} ms")


def test_criterion_06_witness_identity():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        rho = sum(w * projector(b) for w, b in zip(rng.dirichlet(np.ones(4)), BELL))
        worst = max(worst, abs(protocol.witness_fidelity(*protocol.correlations(rho)) - fidelity_with_pure(rho, GHZ)))
    f_ghz = protocol.witness_fidelity(*protocol.correlations(projector(GHZ)))
    f_mix = protocol.witness_fidelity(*protocol.correlations(maximally_mixed(4)))
    ok = worst <= 1e-12 and abs(f_ghz - 1) <= 1e-12 and abs(f_mix - 0.25) <= 1e-12
    verdict(6, ok, f"max deviation = {worst:.2e}, GHZ {f_ghz:.12f}, mixed {f_mix:.12f}")


def test_criterion_07_error_bar():
    rng = np.random.default_rng(7)
    sigma = measurement.error_bar(0.5, 5000, 1.0)
    rel = []
    for p0 in (0.1, 0.5, 0.9):
        samples = rng.binomial(5000, p0, size=10_000) / 5000
        mc = np.std(2 * samples - 1)
        rel.append(abs(measurement.error_bar(p0, 5000, 1.0) - mc) / mc)
    verdict(7, abs(sigma - 0.014142) <= 1e-6 and max(rel) < 0.05,
            f"sigma = {sigma:.6f}, max Monte Carlo deviation = {100 * max(rel):.2f}%")


def test_criterion_08_statistical_tomography():
    model = measurement.ReadoutModel(0.765, 5000)
    start = time.perf_counter()
    ok = True
    worst = 0.0
    for seed in range(5):
        recs = measurement.simulate_tomography(projector(GHZ), model, seed=seed)
        rho = measurement.mle_reconstruct(recs)
        f_w, sig_w = measurement.witness_from_records(recs)
        sig = max(sig_w, 1e-12)
        ok &= is_density_matrix(rho) and abs(np.trace(rho) - 1) < 1e-12
        ok &= abs(measurement.ghz_fidelity(rho) - 1) <= 3 * sig and abs(f_w - 1) <= 3 * sig
        worst = max(worst, abs(measurement.ghz_fidelity(rho) - 1) / sig)
    elapsed = time.perf_counter() - start
    verdict(8, bool(ok) and elapsed < 30, f"max |F - 1| = {worst:.2f} sigma, {elapsed:.2f} s")


def test_criterion_09_gate_compilation():
    reg = reference_register(["2"])
    gate = pulse.compile_gate(pulse.GateTarget("conditional_x_half", "2"), reg)
    ok = gate.fidelity >= 0.99 and gate.reference_tau_ns == 4915 and gate.reference_n_pulses == 16
    ok &= gate.agreement.startswith(("same-order", "different-order"))
    verdict(9, ok, f"tau = {gate.tau_ns:.1f} ns, N = {gate.n_pulses}, F = {gate.fidelity:.5f}, "
                   f"order {gate.resonance_order} vs reference {gate.reference_order}: {gate.agreement}")


def test_criterion_10_protocol_stability(realistic_register):
    start = time.perf_counter()
    lib = {pulse.library_key(s, k): pulse.compile_gate(pulse.GateTarget(k, s), realistic_register)
           for s in ("2", "4") for k in ("conditional_x_half", "z_half", "unconditional_x_half")}
    setup = protocol.compiled_setup(realistic_register, lib, ("2", "4"))
    trace = run_protocol(maximally_mixed(4), 8, NoiseModel(0.99, "compiled", True), setup,
                         measurement.ReadoutModel(0.765, 5000), seed=10)
    elapsed = time.perf_counter() - start
    f, fm = trace.fidelities, trace.measured_fidelities
    ok = bool(np.all(f > 0.5) and np.all(fm > 0.5) and np.std(f[1:]) < 0.05 and elapsed < 300)
    verdict(10, ok, f"F = {np.round(f, 4).tolist()}, measured min {fm.min():.3f}, "
                    f"std(2-8) = {np.std(f[1:]):.4f}, {elapsed:.1f} s")


def test_criterion_11_hyperfine_round_trip():
    reg = reference_register()
    worst = 0.0
    for spin in HYPERFINE_TABLE:
        fp, fm = precession_frequencies(spin, reg)
        p = estimation.hyperfine_from_frequencies(fp, fm, reg.larmor_khz)
        worst = max(worst, abs(p.a_zz - spin.params.a_zz) / abs(spin.params.a_zz),
                    abs(p.a_zx - spin.params.a_zx) / spin.params.a_zx)
    rng = np.random.default_rng(11)
    shrink_ok = True
    for _ in range(20):
        lo = rng.uniform(100, 900)
        truth = lo + rng.uniform(0, 100)
        e = estimation.adaptive_estimate(lambda t: np.cos(2 * np.pi * truth * t * 1e-6), (lo, lo + 100), 10)
        h = np.array(e.history)
        shrink_ok &= bool(np.all(h[:-1] / h[1:] >= 1.5)) and len(h) == 11 and abs(e.center - truth) <= e.half_width
    verdict(11, worst <= 1e-9 and shrink_ok, f"max relative error = {worst:.2e}, geometric shrink {shrink_ok}")

