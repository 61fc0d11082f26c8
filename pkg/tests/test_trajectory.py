"""Integrator tests: effective operators, single-step identities against
an independent term-by-term evaluator, trajectory invariants, the
purification consistency check, and batch/single agreement."""

import numpy as np
import pytest

from qsdlab.linalg import (
    check_density,
    hermitize,
    ket,
    projector,
    sigma_minus,
    sigma_y,
    sigma_z,
)
from qsdlab.noise import coarse_step_block, step_block, substream
from qsdlab.spectrum import ordered_spectrum
from qsdlab.trajectory import (
    ModelOperators,
    NumericalAbort,
    effective_operators,
    purification_check,
    run_mixed_batch,
    run_trajectory,
    step_mixed,
    step_pure,
)

PLUS = projector(np.array([1.0, 1.0]) / np.sqrt(2.0))
BELL = (np.kron(ket(0, 2), ket(0, 2)) + np.kron(ket(1, 2), ket(1, 2))) / np.sqrt(2.0)
ZERO2 = np.zeros((2, 2), dtype=complex)


def random_density(rng, d):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_model(rng, d, n):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    Ls = tuple(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(n))
    return ModelOperators(dim=d, hamiltonian=hermitize(G), couplings=Ls)


def reference_mixed_update(rho, ops, dB, dt):
    """Term-by-term evaluation of the mixed-state equation, written in a
    deliberately different style from the production kernel."""
    d = ops.dim
    eye = np.eye(d, dtype=complex)
    total = np.array(rho, dtype=complex, copy=True)
    exps = [np.trace(np.dot(rho, L)) for L in ops.couplings]
    for L, e, b in zip(ops.couplings, exps, dB):
        Lt = L - e * eye
        total = total + b * np.dot(Lt, rho)
        total = total + np.conj(b) * np.dot(rho, Lt.conj().T)
    Ht = np.array(ops.hamiltonian, dtype=complex, copy=True)
    for L, e in zip(ops.couplings, exps):
        Ht = Ht + 1j * (L * np.conj(e) - L.conj().T * e)
    total = total + dt * (np.dot(rho, 1j * Ht) - np.dot(1j * Ht, rho))
    for L, e in zip(ops.couplings, exps):
        Lt = L - e * eye
        A = np.dot(Lt.conj().T, Lt)
        total = total - dt * (np.dot(rho, A) + np.dot(A, rho))
        total = total + dt * 2.0 * np.dot(np.dot(Lt, rho), Lt.conj().T)
    return total


class TestEffectiveOperators:
    def test_traceless_coupling_on_mixed_state(self):
        ops = ModelOperators(dim=2, hamiltonian=sigma_y, couplings=(sigma_z,))
        eff = effective_operators(np.eye(2) / 2, ops)
        assert eff.expectations[0] == pytest.approx(0.0, abs=1e-14)
        assert np.array_equal(eff.centered[0], sigma_z)
        assert np.array_equal(eff.shifted_hamiltonian, sigma_y)

    def test_eigenstate_expectation(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        eff = effective_operators(projector(ket(0, 2)), ops)
        assert eff.expectations[0] == pytest.approx(1.0, abs=1e-14)
        assert np.abs(eff.centered[0] - (sigma_z - np.eye(2))).max() < 1e-14

    def test_lowering_on_plus_state(self):
        H = 0.3 * sigma_z
        ops = ModelOperators(dim=2, hamiltonian=H, couplings=(sigma_minus,))
        eff = effective_operators(PLUS, ops)
        assert eff.expectations[0] == pytest.approx(0.5, abs=1e-14)
        assert np.abs(eff.shifted_hamiltonian - (H - sigma_y / 2)).max() < 1e-14

    def test_centered_means_zero_expectation(self):
        rng = np.random.default_rng(31)
        ops = random_model(rng, 3, 2)
        rho = random_density(rng, 3)
        eff = effective_operators(rho, ops)
        for Lt in eff.centered:
            assert abs(np.trace(rho @ Lt)) < 1e-12
        assert np.abs(eff.shifted_hamiltonian - eff.shifted_hamiltonian.conj().T).max() < 1e-12


class TestStepMixed:
    def test_no_channels_diagonal_fixed(self):
        ops = ModelOperators(dim=2, hamiltonian=sigma_z, couplings=())
        rho = np.diag([0.7, 0.3]).astype(complex)
        out = step_mixed(rho, ops, np.empty(0, dtype=complex), 1e-3)
        assert np.abs(out - rho).max() < 1e-15

    def test_raw_update_conserves_trace_and_hermiticity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            ops = random_model(rng, 3, 2)
            rho = random_density(rng, 3)
            dB = np.sqrt(1e-3) * (rng.normal(size=2) + 1j * rng.normal(size=2))
            raw = reference_mixed_update(rho, ops, dB, 1e-3)
            assert abs(np.trace(raw) - 1.0) < 1e-13
            assert np.abs(raw - raw.conj().T).max() < 1e-13

    def test_matches_independent_evaluator(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            d = int(rng.integers(2, 5))
            ops = random_model(rng, d, int(rng.integers(1, 3)))
            rho = random_density(rng, d)
            dB = np.sqrt(1e-3) * (
                rng.normal(size=ops.n_channels) + 1j * rng.normal(size=ops.n_channels)
            )
            raw = reference_mixed_update(rho, ops, dB, 1e-3)
            expected = hermitize(raw)
            expected /= np.trace(expected).real
            got = step_mixed(rho, ops, dB, 1e-3, psd_hard=1.0)
            assert np.abs(got - expected).max() < 1e-12

    def test_channel_count_mismatch(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        with pytest.raises(ValueError):
            step_mixed(np.eye(2) / 2, ops, np.zeros(2, dtype=complex), 1e-3)

    def test_hard_floor_abort(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_minus,))
        rho = projector(ket(1, 2))
        # a large increment from the boundary state must trip a tiny floor
        dB = np.array([0.2 + 0.2j])
        with pytest.raises(NumericalAbort):
            step_mixed(rho, ops, dB, 1e-3, psd_hard=1e-9)


class TestStepPure:
    def test_null_generator(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(ZERO2,))
        psi = np.kron(ket(0, 2), ket(1, 2))
        out = step_pure(psi, ops, 2, np.array([0.1 + 0.2j]), 1e-3)
        assert np.abs(out - psi).max() < 1e-14

    def test_hermitian_eigenvector_fixed_point(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        psi = np.kron(ket(1, 2), ket(0, 2))  # sigma_z (x) I eigenvector
        out = step_pure(psi, ops, 2, np.array([0.05 - 0.03j]), 1e-3)
        assert np.abs(out - psi).max() < 1e-14

    def test_norm_defect_scales_linearly_in_dt(self):
        rng = np.random.default_rng(12)
        ops = random_model(rng, 2, 1)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        z = rng.normal() + 1j * rng.normal()
        defects = {}
        for dt in (1e-3, 5e-4):
            fn = lambda step, dt=dt: np.array([[np.sqrt(dt) * z]])  # noqa: E731
            from qsdlab.trajectory import run_pure_batch

            rec = run_pure_batch(psi, ops, 2, dt, 1, 0, np.array([0], dtype=np.uint64),
                                 record_stride=1, increment_fn=fn)
            defects[dt] = rec.max_trace_defect[0, -1]
        ratio = defects[1e-3] / defects[5e-4]
        assert 1.6 < ratio < 2.4

    def test_norm_validation(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        with pytest.raises(ValueError):
            step_pure(np.ones(4, dtype=complex), ops, 2, np.array([0.0j]), 1e-3)


class TestRunTrajectory:
    def test_single_step_record_length_two(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        rec = run_trajectory(np.diag([0.7, 0.3]), ops, 1e-3, 1e-3, substream(1, 0))
        assert rec.times.shape == (2,)
        assert rec.states.shape == (2, 2, 2)

    def test_unitary_run_isospectral(self):
        rng = np.random.default_rng(3)
        d = 3
        H = hermitize(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
        ops = ModelOperators(dim=d, hamiltonian=H, couplings=())
        rho0 = random_density(rng, d)
        rec = run_trajectory(rho0, ops, 1e-3, 1.0, substream(0, 0))
        ref = ordered_spectrum(rho0)
        drift = np.abs(rec.spectrum.values - ref[None, :]).max()
        assert drift < 1e-10

    def test_explicit_zero_couplings_isospectral(self):
        rng = np.random.default_rng(4)
        H = hermitize(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
        ops = ModelOperators(dim=2, hamiltonian=H, couplings=(ZERO2,))
        rho0 = random_density(rng, 2)
        rec = run_trajectory(rho0, ops, 1e-3, 0.5, substream(0, 1))
        assert np.abs(rec.spectrum.values - rec.spectrum.values[0][None, :]).max() < 1e-10

    def test_dephasing_initial_purity_growth_rate(self):
        # ensemble-mean growth of Tr rho^2 from I/2 starts at rate 2
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        t_max = 0.02
        batch = run_mixed_batch(
            np.eye(2, dtype=complex) / 2, ops, 1e-3, 20, seed=2024,
            stream_ids=np.arange(500, dtype=np.uint64), record_stride=20,
        )
        idx = list(batch.orders).index(2)
        rate = (batch.moments[:, -1, idx].mean() - 0.5) / t_max
        assert 1.7 < rate < 2.3

    def test_record_states_are_valid_densities(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        rec = run_trajectory(np.diag([0.7, 0.3]), ops, 1e-3, 1.0, substream(11, 5))
        for state in rec.states:
            assert check_density(state).ok
        assert rec.max_trace_defect.max() < 1e-13
        assert rec.max_herm_defect.max() < 1e-13

    def test_fixed_point_hermitian_coupling(self):
        ops = ModelOperators(dim=2, hamiltonian=0.4 * sigma_z, couplings=(sigma_z,))
        rho0 = projector(ket(0, 2))
        rec = run_trajectory(rho0, ops, 1e-3, 0.3, substream(7, 0))
        assert np.abs(rec.states - rho0[None]).max() < 1e-12

    def test_fixed_point_lowering_kernel(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_minus,))
        rho0 = projector(ket(0, 2))
        rec = run_trajectory(rho0, ops, 1e-3, 0.3, substream(7, 1))
        assert np.abs(rec.states - rho0[None]).max() < 1e-12

    def test_batch_row_matches_single_run(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_minus,))
        rho0 = np.diag([0.4, 0.6]).astype(complex)
        ids = np.arange(6, dtype=np.uint64)
        batch = run_mixed_batch(rho0, ops, 1e-3, 200, seed=99, stream_ids=ids,
                                psd_hard=5e-2)
        single = run_trajectory(rho0, ops, 1e-3, 0.2, substream(99, 3), psd_hard=5e-2)
        assert np.array_equal(single.states, batch.states[3])
        assert np.array_equal(single.ledger.martingale_path, batch.martingale[3])
        assert np.array_equal(single.spectrum.values, batch.spectrum[3])

    def test_stream_counter_advances(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        stream = substream(1, 2)
        run_trajectory(np.diag([0.7, 0.3]), ops, 1e-3, 0.05, stream)
        assert stream.counter == 50

    def test_time_grid_validation(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        with pytest.raises(ValueError):
            run_trajectory(np.eye(2) / 2, ops, 1e-3, 1e-4, substream(0, 0))


class TestPurification:
    def test_product_state_stays_consistent_and_pure(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        phi = (ket(0, 2) + ket(1, 2)) / np.sqrt(2.0)
        psi0 = np.kron(phi, ket(0, 2))
        res = purification_check(psi0, ops, 2, 1e-3, 0.5, seed=4, psd_hard=5e-2)
        assert res.max_deviation < 0.05
        # both reduced trajectories stay pure within discretization error
        assert res.pure.purity_residual.max() < 0.05
        assert res.mixed.purity_residual.max() < 0.05

    def test_zero_deviation_at_t0(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        res = purification_check(BELL, ops, 2, 1e-3, 0.1, seed=4, psd_hard=5e-2)
        assert res.deviations[0, 0] == 0.0

    def test_bell_refinement(self):
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        ids = (0, 1, 2, 3)
        devs = {}
        for level, dt in enumerate((2e-3, 1e-3)):
            factor = int(round(dt / 1e-3))
            fn = (
                None
                if factor == 1
                else (lambda step, f=factor: coarse_step_block(4, np.asarray(ids, dtype=np.uint64), step, 1, 1e-3, f))
            )
            res = purification_check(BELL, ops, 2, dt, 1.0, seed=4, stream_ids=ids,
                                     psd_hard=5e-2, increment_fn=fn)
            devs[dt] = res.deviations.max(axis=1).mean()
        assert devs[1e-3] < devs[2e-3]

    def test_same_noise_path_is_used(self):
        # the two runs inside the check must consume identical increments
        ops = ModelOperators(dim=2, hamiltonian=ZERO2, couplings=(sigma_z,))
        ids = np.array([5], dtype=np.uint64)
        seen = []
        def spy(step):
            block = step_block(4, ids, step, 1, 1e-3)
            seen.append((step, block.copy()))
            return block
        purification_check(BELL, ops, 2, 1e-3, 0.01, seed=4, stream_ids=ids,
                           psd_hard=5e-2, increment_fn=spy)
        steps = [s for s, _ in seen]
        assert steps == steps[: len(steps) // 2] * 2
        for (s1, b1), (s2, b2) in zip(seen[: len(seen) // 2], seen[len(seen) // 2 :]):
            assert s1 == s2 and np.array_equal(b1, b2)
