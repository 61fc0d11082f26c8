"""Matrix kernel tests: validation, Jacobi eigensolver against a
characteristic-polynomial oracle, partial traces against an SVD oracle,
power traces and resolvent traces."""

import numpy as np
import pytest

from qsdlab.linalg import (
    DensityValidationError,
    EigenSystem,
    Tolerances,
    check_density,
    herm_defect,
    hermitian_eigen,
    hermitize,
    ket,
    lift,
    matrix_from_json,
    matrix_to_json,
    partial_trace,
    projector,
    resolvent_trace,
    sigma_minus,
    sigma_z,
    trace_moment,
    validate_density,
)

TOL = Tolerances()


def random_hermitian(rng, d, scale=1.0):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * hermitize(G)


def random_density(rng, d):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def char_poly_roots(H):
    """Characteristic polynomial via the Faddeev-LeVerrier recurrence,
    then numpy root finding; independent of any Hermitian eigensolver."""
    d = H.shape[0]
    coeffs = np.zeros(d + 1, dtype=complex)
    coeffs[0] = 1.0
    M = np.eye(d, dtype=complex)
    for k in range(1, d + 1):
        AM = H @ M
        coeffs[k] = -np.trace(AM) / k
        M = AM + coeffs[k] * np.eye(d)
    return np.sort(np.roots(coeffs).real)[::-1]


class TestValidateDensity:
    def test_maximally_mixed_accepted(self):
        out = validate_density(np.eye(2) / 2)
        assert np.allclose(out, np.eye(2) / 2)

    def test_diagonal_accepted(self):
        validate_density(np.diag([0.7, 0.3]))

    def test_negative_eigenvalue_rejected(self):
        report = check_density(np.diag([1.1, -0.1]))
        assert not report.ok
        names = [name for name, _ in report.violations]
        assert "negative eigenvalue" in names
        mag = dict(report.violations)["negative eigenvalue"]
        assert mag == pytest.approx(-0.1, abs=1e-12)

    def test_non_hermitian_rejected(self):
        report = check_density(np.array([[1.0, 1.0], [0.0, 0.0]]))
        assert not report.ok
        assert any(name == "non-Hermitian" for name, _ in report.violations)
        with pytest.raises(DensityValidationError):
            validate_density(np.array([[1.0, 1.0], [0.0, 0.0]]))

    def test_trace_violation_measured(self):
        report = check_density(np.diag([0.7, 0.7]))
        assert not report.ok
        assert dict(report.violations)["trace != 1"] == pytest.approx(0.4)

    def test_non_square_raises(self):
        with pytest.raises(ValueError):
            check_density(np.zeros((2, 3)))

    def test_non_finite_raises(self):
        bad = np.diag([np.nan, 1.0])
        with pytest.raises(ValueError):
            check_density(bad)


class TestHermitianEigen:
    def test_identity_halved(self):
        sys = hermitian_eigen(np.eye(2) / 2)
        assert np.allclose(sys.eigenvalues, [0.5, 0.5])

    def test_sigma_z(self):
        sys = hermitian_eigen(sigma_z)
        assert np.allclose(sys.eigenvalues, [1.0, -1.0])
        # eigenvectors are the basis states up to phase
        assert abs(abs(sys.eigenvectors[0, 0]) - 1.0) < 1e-12
        assert abs(abs(sys.eigenvectors[1, 1]) - 1.0) < 1e-12

    def test_char_poly_oracle_4x4(self):
        rng = np.random.default_rng(411)
        for _ in range(10):
            H = random_hermitian(rng, 4)
            mine = hermitian_eigen(H).eigenvalues
            oracle = char_poly_roots(H)
            assert np.abs(mine - oracle).max() < 1e-10

    @pytest.mark.parametrize("d", [2, 3, 5, 8, 16])
    def test_residual_and_gram(self, d):
        rng = np.random.default_rng(d)
        H = random_hermitian(rng, d)
        sys = hermitian_eigen(H)
        for a in range(d):
            v = sys.eigenvectors[:, a]
            assert np.linalg.norm(H @ v - sys.eigenvalues[a] * v) < TOL.eig_tol
        gram = sys.eigenvectors.conj().T @ sys.eigenvectors
        assert np.abs(gram - np.eye(d)).max() < TOL.eig_tol

    def test_reconstruction(self):
        rng = np.random.default_rng(7)
        H = random_hermitian(rng, 6)
        sys = hermitian_eigen(H)
        rebuilt = (sys.eigenvectors * sys.eigenvalues) @ sys.eigenvectors.conj().T
        assert np.abs(rebuilt - H).max() < 10 * TOL.eig_tol

    def test_sorted_descending(self):
        rng = np.random.default_rng(99)
        H = random_hermitian(rng, 7)
        vals = hermitian_eigen(H).eigenvalues
        assert np.all(np.diff(vals) <= 0)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            hermitian_eigen(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_bitwise_reproducible(self):
        rng = np.random.default_rng(5)
        H = random_hermitian(rng, 5)
        a = hermitian_eigen(H)
        b = hermitian_eigen(H)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.eigenvectors, b.eigenvectors)

    def test_returns_eigensystem(self):
        assert isinstance(hermitian_eigen(sigma_z), EigenSystem)


class TestPartialTrace:
    def test_product_state(self):
        rng = np.random.default_rng(21)
        rho = random_density(rng, 2)
        sig = random_density(rng, 3)
        out = partial_trace(np.kron(rho, sig), (2, 3))
        assert np.abs(out - rho).max() < 1e-12

    def test_bell_state(self):
        bell = (np.kron(ket(0, 2), ket(0, 2)) + np.kron(ket(1, 2), ket(1, 2))) / np.sqrt(2)
        out = partial_trace(bell, (2, 2))
        assert np.abs(out - np.eye(2) / 2).max() < 1e-12

    def test_schmidt_svd_oracle(self):
        rng = np.random.default_rng(33)
        for _ in range(10):
            psi = rng.normal(size=6) + 1j * rng.normal(size=6)
            psi /= np.linalg.norm(psi)
            out = partial_trace(psi, (2, 3))
            mine = np.sort(hermitian_eigen(out).eigenvalues)[::-1]
            svals = np.linalg.svd(psi.reshape(2, 3), compute_uv=False)
            assert np.abs(mine - np.sort(svals**2)[::-1]).max() < 1e-12

    def test_trace_preserved_and_valid(self):
        rng = np.random.default_rng(8)
        rho = random_density(rng, 6)
        out = partial_trace(rho, (2, 3))
        assert abs(np.trace(out) - 1.0) < 1e-12
        assert check_density(out).ok

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            partial_trace(np.zeros(5, dtype=complex), (2, 3))


class TestTraceMoment:
    def test_pure_state_all_orders(self):
        rho = projector(ket(0, 3))
        for m in range(1, 7):
            assert trace_moment(rho, m) == pytest.approx(1.0, abs=1e-13)

    @pytest.mark.parametrize("d,m", [(2, 2), (3, 3), (4, 5)])
    def test_uniform_spectrum(self, d, m):
        assert trace_moment(np.eye(d) / d, m) == pytest.approx(d ** (1 - m), abs=1e-13)

    def test_hand_value(self):
        assert trace_moment(np.diag([0.7, 0.3]), 2) == pytest.approx(0.58, abs=1e-14)

    def test_monotone_in_order(self):
        rng = np.random.default_rng(13)
        rho = random_density(rng, 5)
        vals = [trace_moment(rho, m) for m in range(1, 8)]
        assert all(b <= a + 1e-13 for a, b in zip(vals, vals[1:]))

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            trace_moment(np.eye(2) / 2, 0)


class TestResolventTrace:
    def test_x_zero_gives_dimension(self):
        rng = np.random.default_rng(2)
        rho = random_density(rng, 4)
        assert resolvent_trace(rho, 0.0) == pytest.approx(4.0, abs=1e-12)

    def test_hand_value(self):
        got = resolvent_trace(np.diag([0.7, 0.3]), 0.5)
        assert got == pytest.approx(1 / 0.65 + 1 / 0.85, abs=1e-12)

    @pytest.mark.parametrize("x", [-0.9, -0.5, 0.5, 0.9])
    def test_geometric_series_bound(self, x):
        rng = np.random.default_rng(17)
        rho = random_density(rng, 3)
        d = 3
        M = 260
        series = sum(
            x**m * (d if m == 0 else trace_moment(rho, m)) for m in range(M + 1)
        )
        bound = d * abs(x) ** (M + 1) / (1 - abs(x))
        assert abs(resolvent_trace(rho, x) - series) <= bound + 1e-12

    def test_rejects_unit_x(self):
        with pytest.raises(ValueError):
            resolvent_trace(np.eye(2) / 2, 1.0)


class TestSerialization:
    def test_matrix_round_trip(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        doc = matrix_to_json(A)
        assert doc["dim"] == [3, 3]
        back = matrix_from_json(doc)
        assert np.array_equal(A, back)

    def test_vector_round_trip(self):
        v = np.array([1.0, 1j, -0.5]) / np.sqrt(2.25)
        back = matrix_from_json(matrix_to_json(v))
        assert np.array_equal(v, back)

    def test_entry_count_checked(self):
        with pytest.raises(ValueError):
            matrix_from_json({"dim": [2, 2], "entries": [[1.0, 0.0]]})


def test_lift_shape_and_action():
    L = lift(sigma_minus, 3)
    assert L.shape == (6, 6)
    assert np.array_equal(L, np.kron(sigma_minus, np.eye(3)))


def test_herm_defect_zero_for_hermitian():
    rng = np.random.default_rng(4)
    H = random_hermitian(rng, 4)
    assert herm_defect(H) == 0.0
