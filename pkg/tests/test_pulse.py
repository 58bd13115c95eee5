import json

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from nvdissip import protocol, pulse
from nvdissip.qmath import embed, is_unitary, kron, pauli, projector, rx
from nvdissip.spin_model import (
    HyperfineParams,
    NuclearSpin,
    SpinRegister,
    conditional_free_evolution,
    microwave_pi_pulse,
    reference_register,
)

NO2 = reference_register(["2"])
TABLE = reference_register()


def naive_cpmg(spec, reg):
    """Full-register product: tau/2, then (pi, tau) repeated, ending with tau/2."""
    n = spec.n_pulses
    if n == 0:
        return conditional_free_evolution(reg, spec.tau)
    half = conditional_free_evolution(reg, spec.tau / 2)
    full = conditional_free_evolution(reg, spec.tau)
    u = half
    for k, axis in enumerate(spec.pulses):
        u = microwave_pi_pulse(reg, axis) @ u
        u = (full if k < n - 1 else half) @ u
    return u


def min_phase_distance(u, v):
    """min over phi of the spectral norm of U - e^{i phi} V."""
    ov = np.angle(np.trace(v.conj().T @ u))
    res = minimize_scalar(lambda p: np.linalg.norm(u - np.exp(1j * p) * v, 2), bracket=(ov - 0.3, ov, ov + 0.3))
    return res.fun


class TestSpec:
    def test_xy8_pattern(self):
        assert pulse.CpmgGateSpec(10, 8).pulses == "XYXYYXYX"
        assert pulse.CpmgGateSpec(10, 12).pulses == "XYXYYXYXXYXY"
        assert pulse.CpmgGateSpec(10, 4).pulses == "XYXY"

    @pytest.mark.parametrize("args", [(0, 4), (10, -1), (10, 4, "XZ")])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            pulse.CpmgGateSpec(*args)

    def test_gate_target_kind(self):
        t = pulse.GateTarget("z_half", "2")
        assert t.kind is pulse.GateKind.Z_HALF
        with pytest.raises(ValueError):
            pulse.GateTarget("nope", "2")


class TestCpmgUnitary:
    @pytest.mark.parametrize("spec", [pulse.CpmgGateSpec(300.0, 4), pulse.CpmgGateSpec(4915.0, 8),
                                      pulse.CpmgGateSpec(123.0, 12), pulse.CpmgGateSpec(57.0, 0)])
    def test_matches_naive_product(self, spec):
        reg = reference_register(["1", "2", "4"])
        u = pulse.cpmg_unitary(spec, reg)
        assert is_unitary(u, 1e-12)
        np.testing.assert_allclose(u, naive_cpmg(spec, reg), atol=1e-12)

    def test_zero_pulses_is_free_evolution(self):
        u = pulse.cpmg_unitary(pulse.CpmgGateSpec(250.0, 0), TABLE)
        np.testing.assert_allclose(u, conditional_free_evolution(TABLE, 250.0), atol=1e-13)

    def test_off_resonance_decoupled(self):
        # between resonances the electron coherence survives
        spin = NO2.spin("2")
        tau = 0.5 * (pulse.resonance_tau(spin, NO2, 4) + pulse.resonance_tau(spin, NO2, 5))
        u = pulse.cpmg_unitary(pulse.CpmgGateSpec(tau, 8), NO2)
        plus = np.array([1, 1]) / np.sqrt(2)
        rho = kron(projector(plus), np.eye(2) / 2)
        x = np.real(np.trace(u @ rho @ u.conj().T @ kron(pauli("X"), np.eye(2))))
        assert abs(x) > 0.99


class TestCpmgSignal:
    def test_matches_naive_simulation(self):
        reg = reference_register(["2", "4"])
        taus = [400.0, 1003.0, 4915.0, 5234.0]
        sig = pulse.cpmg_signal(reg, taus, 8)
        plus = np.array([1, 1]) / np.sqrt(2)
        rho = kron(projector(plus), np.eye(4) / 4)
        proj = kron(projector(plus), np.eye(4))
        for tau, s in zip(taus, sig):
            u = naive_cpmg(pulse.CpmgGateSpec(tau, 8), reg)
            assert s == pytest.approx(np.real(np.trace(u @ rho @ u.conj().T @ proj)), abs=1e-12)

    def test_empty_register_flat(self):
        np.testing.assert_array_equal(pulse.cpmg_signal(SpinRegister(), np.arange(100, 500, 50.0), 16), 1.0)

    def test_no_transverse_coupling_flat(self):
        reg = SpinRegister(spins=(NuclearSpin("a", HyperfineParams(80.0, 0.0)), NuclearSpin("b", HyperfineParams(-30.0, 0.0))))
        np.testing.assert_allclose(pulse.cpmg_signal(reg, np.arange(100, 6000, 7.0), 16), 1.0, atol=1e-12)

    def test_range_and_empty_grid(self):
        s = pulse.cpmg_signal(TABLE, np.arange(100, 8000, 13.0), 16)
        assert s.min() >= 0 and s.max() <= 1
        with pytest.raises(ValueError):
            pulse.cpmg_signal(TABLE, [], 16)

    def test_dip_position_stable_under_refinement(self):
        lo, hi = 4800.0, 5100.0
        coarse = np.arange(lo, hi, 2.0)
        fine = np.arange(lo, hi, 0.25)
        t_c = coarse[np.argmin(pulse.cpmg_signal(NO2, coarse, 16))]
        t_f = fine[np.argmin(pulse.cpmg_signal(NO2, fine, 16))]
        assert abs(t_c - t_f) <= 2.0

    @pytest.mark.xfail(strict=True, reason="model gives No.1 narrower dips (about 350 ns vs 940 ns below 0.9 at N=16)")
    def test_no1_dips_broader_than_no2(self):
        taus = np.arange(100, 8000, 2.0)
        width = {sid: 2.0 * np.sum(pulse.cpmg_signal(reference_register([sid]), taus, 16) < 0.9) for sid in ("1", "2")}
        assert width["1"] > width["2"]


class TestRealizedGate:
    def test_pair_without_spectators(self):
        spec = pulse.CpmgGateSpec(4929.0, 8)
        g = pulse.realized_gate(spec, NO2, "2")
        np.testing.assert_array_equal(g.full, g.pair)
        with pytest.raises(KeyError):
            pulse.realized_gate(spec, NO2, "1")

    def test_pair_with_spectators(self):
        spec = pulse.CpmgGateSpec(4929.0, 8)
        g = pulse.realized_gate(spec, TABLE, "2")
        assert g.full.shape == (32, 32) and g.pair.shape == (4, 4)
        np.testing.assert_allclose(g.pair, pulse.cpmg_unitary(spec, NO2), atol=0)

    def test_table_ii_tau_with_half_pulse_count(self):
        gate = pulse.compile_gate(pulse.GateTarget("conditional_x_half", "2"), NO2,
                                  {"tau_range": (4915, 4915), "n_range": (8, 8)})
        assert gate.fidelity >= 0.98
        assert gate.resonance_order == gate.reference_order == 5

    @pytest.mark.xfail(strict=True, reason="published N=16 gives a pi rotation here; the half count gives pi/2")
    def test_table_ii_row_verbatim(self):
        gate = pulse.compile_gate(pulse.GateTarget("conditional_x_half", "2"), NO2,
                                  {"tau_range": (4915, 4915), "n_range": (16, 16)})
        assert gate.fidelity >= 0.98

    def test_short_tau_z_gate_is_unconditional(self):
        u = pulse.cpmg_unitary(pulse.CpmgGateSpec(37.0, 4), NO2)
        b0, b1 = u[:2, :2], u[2:, 2:]
        np.testing.assert_array_equal(u[:2, 2:], 0)
        assert pulse.gate_fidelity(b0, b1) > 0.9999
        # rotation axis close to z
        assert abs(b0[0, 1]) < 0.05

    def test_short_tau_near_identity(self):
        u = pulse.cpmg_unitary(pulse.CpmgGateSpec(1.0, 8), NO2)
        assert pulse.gate_fidelity(u, np.eye(4)) > 0.999


class TestGateFidelity:
    def test_identical_and_phase(self, rng):
        from nvdissip.qmath import random_unitary
        u = random_unitary(4, rng)
        assert pulse.gate_fidelity(u, u) == pytest.approx(1)
        assert pulse.gate_fidelity(np.exp(0.7j) * u, u) == pytest.approx(1)

    def test_x_vs_identity(self):
        assert pulse.gate_fidelity(pauli("X"), np.eye(2)) == pytest.approx(1 / 3)

    def test_rejects_non_unitary(self):
        with pytest.raises(ValueError):
            pulse.gate_fidelity(2 * np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            pulse.gate_fidelity(np.eye(2), np.eye(4))


class TestCompile:
    def test_single_spin_conditional(self, single_no2_library):
        _, lib = single_no2_library
        gate = lib["2:conditional_x_half"]
        assert gate.fidelity >= 0.99
        assert gate.reference_tau_ns == 4915 and gate.reference_n_pulses == 16
        assert gate.reference_order == 5
        assert gate.resonance_order % 2 == 1
        assert gate.agreement.startswith("same-order") or gate.agreement.startswith("different-order")

    def test_compiled_unitary_meets_reported_fidelity(self, single_no2_library):
        reg, lib = single_no2_library
        gate = lib["2:conditional_x_half"]
        u = pulse.compiled_unitary(gate, reg)
        ideal = pulse.ideal_gate(pulse.GateKind.CONDITIONAL_X_HALF, gate.sign)
        assert pulse.gate_fidelity(u, ideal) == pytest.approx(gate.fidelity, abs=1e-6)

    def test_reference_order_search(self):
        gate = pulse.compile_gate(pulse.GateTarget("conditional_x_half", "2"), NO2, order_span=0)
        assert gate.resonance_order == 5
        assert "tau-within-2pct" in gate.agreement

    def test_deterministic(self):
        t = pulse.GateTarget("conditional_x_half", "4")
        reg = reference_register(["4"])
        assert pulse.compile_gate(t, reg) == pulse.compile_gate(t, reg)

    def test_empty_n_range(self):
        with pytest.raises(ValueError):
            pulse.compile_gate(pulse.GateTarget("z_half", "2"), NO2, {"tau_range": (30, 40), "n_range": (0, 0)})

    def test_floor_failure_carries_best(self):
        with pytest.raises(pulse.CompileError) as exc:
            pulse.compile_gate(pulse.GateTarget("z_half", "2"), NO2, {"tau_range": (30, 40), "n_range": (4, 4)},
                               fidelity_floor=0.9999)
        assert exc.value.best.fidelity < 0.9999
        assert exc.value.best.n_pulses == 4

    def test_spectator_penalty_lowers_objective(self):
        t = pulse.GateTarget("conditional_x_half", "2")
        search = {"tau_range": (4920, 4940), "n_range": (8, 8)}
        lone = pulse.compile_gate(t, NO2, search)
        crowded = pulse.compile_gate(t, reference_register(["1", "2"]), search)
        assert crowded.objective < lone.objective

    def test_frame_correction_ideal_limit(self):
        # a perfect conditional rotation needs no frame update
        w = np.stack([rx(np.pi / 2), rx(-np.pi / 2)])
        f, phi, theta = pulse.frame_fidelity(w, pulse.ideal_blocks(pulse.GateKind.CONDITIONAL_X_HALF))
        assert f == pytest.approx(1, abs=1e-12)
        assert abs(phi) < 1e-6 and abs(theta) < 1e-6


class TestCnot:
    def test_ideal_identity(self):
        uc_minus = (np.eye(4) + 1j * kron(pauli("Z"), pauli("X"))) / np.sqrt(2)
        s_e = kron(np.diag([1, 1j]), np.eye(2))
        cnot = s_e @ uc_minus @ kron(np.eye(2), rx(np.pi / 2))
        assert pulse.gate_fidelity(cnot, pulse.ideal_gate(pulse.GateKind.CNOT_E_TO_N)) == pytest.approx(1, abs=1e-14)

    def test_compiled_cnot(self, single_no2_library):
        reg, lib = single_no2_library
        cnot = pulse.cnot_from_conditional(lib["2:conditional_x_half"], reg, "2")
        assert pulse.gate_fidelity(cnot, pulse.ideal_gate(pulse.GateKind.CNOT_E_TO_N)) >= 0.98
        plus = np.array([1, 1]) / np.sqrt(2)
        psi = cnot @ kron(plus, [1, 0])
        rho = np.outer(psi, psi.conj())
        xx = np.real(np.trace(rho @ kron(pauli("X"), pauli("X"))))
        zz = np.real(np.trace(rho @ kron(pauli("Z"), pauli("Z"))))
        assert xx**2 + zz**2 == pytest.approx(2, abs=0.02)

    def test_control_off_branch(self, single_no2_library):
        reg, lib = single_no2_library
        cnot = pulse.cnot_from_conditional(lib["2:conditional_x_half"], reg, "2")
        block = cnot[:2, :2]
        assert pulse.gate_fidelity(block / np.sqrt(np.linalg.det(block)), np.eye(2)) > 0.99

    def test_from_spec(self, single_no2_library):
        reg, lib = single_no2_library
        g = lib["2:conditional_x_half"]
        a = pulse.cnot_from_conditional(g.spec, reg, "2")
        b = pulse.cnot_from_conditional(g, reg, "2")
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_low_quality_warns(self):
        with pytest.warns(pulse.GateQualityWarning):
            pulse.cnot_from_conditional(pulse.CpmgGateSpec(4915.0, 16), NO2, "2")


class TestLibrary:
    def test_round_trip(self, tmp_path, single_no2_library):
        _, lib = single_no2_library
        path = tmp_path / "lib.json"
        pulse.save_library(lib.values(), path)
        assert pulse.load_library(path) == lib
        assert sorted(json.loads(path.read_text())) == sorted(lib)
        assert len(lib) == 3


def test_composite_sequence_one(single_no2_library):
    """Sequence 1 from compiled No.2 gates; the second nucleus is an ideal qubit."""
    reg, lib = single_no2_library
    compiled = protocol.CompiledBackend(reg, lib, {"n1": "2"})
    ideal = protocol.IdealBackend()

    class Hybrid:
        def gate_unitary(self, gate, layout, n):
            if "n2" in gate.targets:
                return ideal.gate_unitary(gate, layout, n)
            return embed(compiled.gate_unitary(gate, {"e": 0, "n1": 1}, 2), [0, 1], 3)

    layout = {"e": 0, "n1": 1, "n2": 2}
    u = protocol.circuit_unitary(protocol.sequence1_circuit().simplified(), layout, 3, Hybrid())
    target = protocol.circuit_unitary(protocol.sequence1_circuit(), layout, 3)
    dist = min_phase_distance(u, target)
    assert dist <= 0.1, dist
