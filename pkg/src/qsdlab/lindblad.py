"""Deterministic semigroup oracle: the GKSL generator in the rate
convention used throughout this package (coefficient 1 on the symmetric
dissipator terms and 2 on the sandwich term), its superoperator
vectorization, exact propagation, and the ensemble-mean unraveling check.

Vectorization uses column stacking: rho -> vec(rho) stacked column by
column, so A rho B -> (B^T kron A) vec(rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .linalg import DEFAULT_TOLERANCES, Tolerances, hermitize, validate_density
from .trajectory import ModelOperators

__all__ = [
    "Superoperator",
    "gksl_apply",
    "superoperator",
    "evolve_exact",
    "unraveling_check",
    "UnravelingReport",
]


def gksl_apply(rho, ops: ModelOperators) -> np.ndarray:
    """Apply the generator once:
    L(rho) = [rho, iH] - sum_k (rho Lk^dag Lk + Lk^dag Lk rho - 2 Lk rho Lk^dag).
    """
    rho = np.asarray(rho, dtype=complex)
    d = ops.dim
    if rho.shape != (d, d):
        raise ValueError(f"state shape {rho.shape} != ({d}, {d})")
    H = ops.hamiltonian
    out = 1j * (rho @ H - H @ rho)
    for L in ops.couplings:
        A = L.conj().T @ L
        out -= rho @ A + A @ rho - 2.0 * (L @ rho @ L.conj().T)
    return out


@dataclass(frozen=True)
class Superoperator:
    """d^2 x d^2 matrix acting on column-stacked density matrices."""

    dim: int
    matrix: np.ndarray

    def vec(self, rho) -> np.ndarray:
        return np.asarray(rho, dtype=complex).reshape(-1, order="F")

    def unvec(self, v) -> np.ndarray:
        return np.asarray(v, dtype=complex).reshape(self.dim, self.dim, order="F")

    def apply(self, rho) -> np.ndarray:
        return self.unvec(self.matrix @ self.vec(rho))


def superoperator(ops: ModelOperators) -> Superoperator:
    """The generator as a matrix on vec(rho) (column stacking)."""
    d = ops.dim
    eye = np.eye(d, dtype=complex)
    H = ops.hamiltonian
    mat = 1j * (np.kron(H.T, eye) - np.kron(eye, H))
    for L in ops.couplings:
        A = L.conj().T @ L
        mat -= np.kron(A.T, eye) + np.kron(eye, A) - 2.0 * np.kron(L.conj(), L)
    return Superoperator(dim=d, matrix=mat)


def evolve_exact(rho0, ops: ModelOperators, t: float,
                 tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Propagate rho0 for time t >= 0 through the exponential of the
    vectorized generator; the output is re-validated as a density matrix."""
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    rho0 = validate_density(rho0, tolerances)
    if t == 0.0:
        return rho0
    gen = superoperator(ops)
    out = gen.unvec(expm(gen.matrix * t) @ gen.vec(rho0))
    out = hermitize(out)
    out /= np.trace(out).real
    return validate_density(out, tolerances)


@dataclass
class UnravelingReport:
    """Gap between the ensemble mean of the stochastic trajectories and
    the exact semigroup solution on the record grid."""

    times: np.ndarray
    deviation: np.ndarray        # ||mean - exact||_F per grid point
    se: np.ndarray               # jackknife SE of that deviation
    excess: np.ndarray           # max(deviation - 3 SE, 0)
    n_traj: int
    dt: float

    @property
    def max_excess(self) -> float:
        return float(self.excess.max())

    def within(self, c_dt: float) -> bool:
        """deviation <= 3 SE + c_dt * dt at every recorded time."""
        return bool(np.all(self.deviation <= 3.0 * self.se + c_dt * self.dt))


def unraveling_check(states, times, rho0, ops: ModelOperators, dt: float,
                     min_trajectories: int = 500) -> UnravelingReport:
    """Compare the trajectory-ensemble mean against evolve_exact at every
    recorded time.  `states` has shape (n_traj, n_times, d, d)."""
    states = np.asarray(states, dtype=complex)
    times = np.asarray(times, dtype=float)
    if states.ndim != 4:
        raise ValueError("expected states of shape (n_traj, n_times, d, d)")
    n_traj, n_times = states.shape[:2]
    if n_traj < min_trajectories:
        raise ValueError(
            f"need at least {min_trajectories} trajectories, got {n_traj}"
        )
    if times.shape[0] != n_times:
        raise ValueError(
            f"grid mismatch: {n_times} state rows vs {times.shape[0]} times"
        )
    total = states.sum(axis=0)
    deviation = np.empty(n_times)
    se = np.empty(n_times)
    for g, t in enumerate(times):
        exact = evolve_exact(rho0, ops, float(t))
        mean = total[g] / n_traj
        deviation[g] = np.linalg.norm(mean - exact)
        # jackknife over leave-one-out means of the nonlinear statistic
        loo = (total[g][None, :, :] - states[:, g]) / (n_traj - 1)
        gaps = np.sqrt(np.einsum("nij,nij->n", loo - exact, (loo - exact).conj()).real)
        se[g] = np.sqrt((n_traj - 1) / n_traj * ((gaps - gaps.mean()) ** 2).sum())
    return UnravelingReport(
        times=times,
        deviation=deviation,
        se=se,
        excess=np.maximum(deviation - 3.0 * se, 0.0),
        n_traj=n_traj,
        dt=float(dt),
    )
