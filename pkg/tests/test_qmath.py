import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from nvdissip.qmath import (
    embed,
    expectation,
    fidelity_with_pure,
    ghz_state,
    is_density_matrix,
    kron,
    ket,
    maximally_mixed,
    partial_trace,
    pauli,
    pauli_string,
    projector,
    random_density_matrix,
    random_unitary,
    rx,
    ry,
    rz,
    seed_sequence,
    spin_half,
    trace_distance,
    validate_density_matrix,
)

GHZ = ghz_state(2)


def naive_partial_trace(rho, keep, n):
    """Explicit index summation over the traced qubits."""
    keep = sorted(keep)
    traced = [q for q in range(n) if q not in keep]
    dk = 2 ** len(keep)
    out = np.zeros((dk, dk), dtype=complex)
    for i in range(2**n):
        for j in range(2**n):
            bi = [(i >> (n - 1 - q)) & 1 for q in range(n)]
            bj = [(j >> (n - 1 - q)) & 1 for q in range(n)]
            if any(bi[q] != bj[q] for q in traced):
                continue
            a = int("".join(str(bi[q]) for q in keep), 2)
            b = int("".join(str(bj[q]) for q in keep), 2)
            out[a, b] += rho[i, j]
    return out


class TestPauli:
    def test_identity(self):
        np.testing.assert_array_equal(pauli("I"), np.eye(2))

    def test_z(self):
        np.testing.assert_array_equal(pauli("Z"), [[1, 0], [0, -1]])

    @pytest.mark.parametrize("label", "XYZ")
    def test_involution_hermitian_unitary(self, label):
        p = pauli(label)
        np.testing.assert_allclose(p @ p, np.eye(2), atol=0)
        np.testing.assert_array_equal(p, p.conj().T)

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            pauli("Q")

    def test_returned_matrix_is_a_copy(self):
        p = pauli("X")
        p[0, 0] = 7
        assert pauli("X")[0, 0] == 0

    def test_spin_half_commutator(self):
        sx, sy, sz = (spin_half(a) for a in "XYZ")
        np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-15)

    @pytest.mark.parametrize("gate,label", [(rx, "X"), (ry, "Y"), (rz, "Z")])
    def test_rotations_match_matrix_exponential(self, gate, label):
        for theta in (0.3, -1.2, np.pi):
            np.testing.assert_allclose(gate(theta), expm(-0.5j * theta * pauli(label)), atol=1e-14)


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(pauli("I"), pauli("I")), np.eye(4))

    def test_zz_signs(self):
        np.testing.assert_array_equal(np.diag(kron(pauli("Z"), pauli("Z"))), [1, -1, -1, 1])

    def test_trace_factorizes(self, rng):
        a, b = rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2))
        np.testing.assert_allclose(np.trace(kron(a, b)), np.trace(a) * np.trace(b), rtol=1e-13)

    def test_associative_on_integers(self, rng):
        a, b, c = rng.integers(-5, 5, size=(3, 2, 2))
        np.testing.assert_array_equal(kron(kron(a, b), c), kron(a, kron(b, c)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            kron(np.eye(2), np.array([[np.nan, 0], [0, 1]]))

    def test_pauli_string(self):
        np.testing.assert_array_equal(pauli_string("ZX"), np.kron(pauli("Z"), pauli("X")))


class TestEmbed:
    def test_matches_explicit_kron(self):
        x = pauli("X")
        np.testing.assert_array_equal(embed(x, [1], 3), kron(np.eye(2), x, np.eye(2)))

    def test_target_order_reversed(self, rng):
        u = random_unitary(4, rng)
        swap = np.eye(4)[[0, 2, 1, 3]]
        np.testing.assert_allclose(embed(u, [1, 0], 2), swap @ u @ swap, atol=1e-14)

    def test_rejects_bad_targets(self):
        with pytest.raises(ValueError):
            embed(np.eye(4), [0, 0], 2)
        with pytest.raises(ValueError):
            embed(np.eye(2), [3], 2)


class TestDensityMatrix:
    def test_random_states_valid(self, rng):
        for rank in (1, 2, 4):
            assert is_density_matrix(random_density_matrix(4, rng, rank))

    @pytest.mark.parametrize("bad", [
        np.diag([0.6, 0.6]),
        np.array([[0.5, 0.1], [0.2, 0.5]]),
        np.diag([1.2, -0.2]),
        np.eye(3) / 3,
    ])
    def test_invalid_rejected(self, bad):
        with pytest.raises(ValueError):
            validate_density_matrix(bad)


class TestPartialTrace:
    def test_product_state(self, rng):
        rho = random_density_matrix(4, rng)
        full = kron(projector(ket("0")), rho)
        np.testing.assert_allclose(partial_trace(full, [1, 2], [2, 2, 2]), rho, atol=1e-15)

    def test_ghz_marginal_is_mixed(self):
        np.testing.assert_allclose(partial_trace(projector(GHZ), [0], [2, 2]), np.eye(2) / 2, atol=1e-15)

    def test_matches_index_summation(self, rng):
        rho = random_density_matrix(8, rng)
        for keep in ([0], [1], [2], [0, 2], [1, 2]):
            red = partial_trace(rho, keep, [2, 2, 2])
            np.testing.assert_allclose(red, naive_partial_trace(rho, keep, 3), atol=1e-14)
            np.testing.assert_allclose(np.trace(red), 1, atol=1e-14)

    def test_sequential_equals_joint(self, rng):
        rho = random_density_matrix(16, rng)
        step = partial_trace(partial_trace(rho, [0, 1, 3], [2] * 4), [0, 2], [2] * 3)
        np.testing.assert_allclose(step, partial_trace(rho, [0, 3], [2] * 4), atol=1e-14)

    def test_keep_order_is_sorted(self, rng):
        rho = random_density_matrix(4, rng)
        np.testing.assert_array_equal(partial_trace(rho, [1, 0], [2, 2]), rho)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            partial_trace(np.eye(4) / 4, [0], [2, 4])
        with pytest.raises(ValueError):
            partial_trace(np.eye(4) / 4, [], [2, 2])


class TestExpectationAndFidelity:
    def test_ghz_stabilizers(self):
        rho = projector(GHZ)
        assert expectation(rho, pauli_string("ZZ")) == pytest.approx(1)
        assert expectation(rho, pauli_string("YY")) == pytest.approx(-1)

    def test_mixed_xx_zero(self):
        assert expectation(maximally_mixed(4), pauli_string("XX")) == 0

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            expectation(maximally_mixed(2), np.array([[0, 1], [0, 0]]))

    def test_fidelity_pure_and_mixed(self):
        assert fidelity_with_pure(projector(GHZ), GHZ) == pytest.approx(1, abs=1e-15)
        assert fidelity_with_pure(maximally_mixed(4), GHZ) == pytest.approx(0.25, abs=1e-15)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            fidelity_with_pure(maximally_mixed(4), 2 * GHZ)

    def test_fidelity_equals_projector_expectation(self, rng):
        for _ in range(20):
            rho = random_density_matrix(4, rng)
            psi = random_unitary(4, rng)[:, 0]
            assert fidelity_with_pure(rho, psi) == pytest.approx(expectation(rho, projector(psi)), abs=1e-12)

    def test_trace_distance_orthogonal(self):
        assert trace_distance(projector(ket("0")), projector(ket("1"))) == pytest.approx(1)

    def test_seed_sequence_passthrough(self):
        ss = np.random.SeedSequence(3)
        assert seed_sequence(ss) is ss
        assert seed_sequence(3).entropy == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.sampled_from(["XX", "YZ", "ZI", "IY"]))
def test_expectation_linear_and_bounded(coeffs, label):
    rho = np.eye(4) / 4 + 0.25 * sum(c * pauli_string(p) for c, p in zip(coeffs, ("XX", "YY", "ZZ"))) / 3
    lam = np.linalg.eigvalsh(rho)
    if lam.min() < 0:
        return
    obs = pauli_string(label)
    e = expectation(rho, obs)
    assert -1 - 1e-12 <= e <= 1 + 1e-12
    assert expectation(rho, 2 * obs + np.eye(4)) == pytest.approx(2 * e + 1, abs=1e-12)
