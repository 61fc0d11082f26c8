"""Dense complex matrix kernel: Hermitian structure, density-matrix
validation, a cyclic Jacobi eigensolver, partial traces, matrix power
traces and resolvent traces.

Everything here is a pure function of its inputs; arrays are treated as
immutable values (callers get fresh arrays back, never views into their
inputs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tolerances",
    "DensityReport",
    "DensityValidationError",
    "EigenConvergenceError",
    "EigenSystem",
    "hermitize",
    "herm_defect",
    "check_density",
    "validate_density",
    "hermitian_eigen",
    "partial_trace",
    "trace_moment",
    "resolvent_trace",
    "lift",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "sigma_minus",
    "ket",
    "projector",
    "matrix_to_json",
    "matrix_from_json",
]


@dataclass(frozen=True)
class Tolerances:
    """Validation tolerances; defaults sit well above double-precision
    noise and well below any physical scale used in the presets."""

    herm_tol: float = 1e-10
    trace_tol: float = 1e-10
    psd_tol: float = 1e-9
    eig_tol: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()


@dataclass
class DensityReport:
    """Outcome of a density-matrix check; `violations` holds
    (invariant name, measured magnitude) pairs."""

    ok: bool
    violations: list[tuple[str, float]] = field(default_factory=list)

    def describe(self) -> str:
        if self.ok:
            return "valid density matrix"
        parts = [f"{name} (magnitude {mag:.3e})" for name, mag in self.violations]
        return "invalid density matrix: " + "; ".join(parts)


class DensityValidationError(ValueError):
    def __init__(self, report: DensityReport):
        super().__init__(report.describe())
        self.report = report


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps did not reduce the off-diagonal below threshold."""


def _as_complex_matrix(M) -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A.view(float))):
        raise ValueError("matrix contains non-finite entries")
    return A


def hermitize(A: np.ndarray) -> np.ndarray:
    """Return the Hermitian part (A + A^dagger)/2."""
    return (A + A.conj().T) / 2


def herm_defect(A: np.ndarray) -> float:
    """Max-norm of A - A^dagger (0 for exactly Hermitian input)."""
    return float(np.abs(A - A.conj().T).max())


def check_density(M, tolerances: Tolerances = DEFAULT_TOLERANCES) -> DensityReport:
    """Check the three density-matrix invariants (Hermitian, unit trace,
    positive semidefinite) and report every violation with its measured
    magnitude.

    Raises ValueError for non-square or non-finite input; those are
    malformed matrices, not merely invalid states.
    """
    A = _as_complex_matrix(M)
    violations = []
    hdef = herm_defect(A)
    if hdef > tolerances.herm_tol:
        violations.append(("non-Hermitian", hdef))
    tdef = abs(np.trace(A) - 1.0)
    if tdef > tolerances.trace_tol:
        violations.append(("trace != 1", float(tdef)))
    if hdef <= tolerances.herm_tol:
        eigs = hermitian_eigen(hermitize(A), tolerances).eigenvalues
        min_eig = float(eigs[-1])
        if min_eig < -tolerances.psd_tol:
            violations.append(("negative eigenvalue", min_eig))
    return DensityReport(ok=not violations, violations=violations)


def validate_density(M, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Return M as a fresh complex array if it is a valid density matrix,
    else raise DensityValidationError carrying the violation report."""
    report = check_density(M, tolerances)
    if not report.ok:
        raise DensityValidationError(report)
    return np.asarray(M, dtype=complex).copy()


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues sorted in decreasing order with matching orthonormal
    eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _jacobi_rotate(A: np.ndarray, V: np.ndarray, p: int, q: int) -> None:
    # One complex Jacobi rotation zeroing A[p,q]; updates A and V in place.
    g = A[p, q]
    r = abs(g)
    if r == 0.0:
        return
    phase = g / r
    tau = (A[q, q].real - A[p, p].real) / (2.0 * r)
    if tau >= 0.0:
        t = 1.0 / (tau + np.hypot(1.0, tau))
    else:
        t = -1.0 / (-tau + np.hypot(1.0, tau))
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = phase * (t * c)
    colp = A[:, p].copy()
    colq = A[:, q].copy()
    A[:, p] = c * colp - np.conj(s) * colq
    A[:, q] = s * colp + c * colq
    rowp = A[p, :].copy()
    rowq = A[q, :].copy()
    A[p, :] = c * rowp - s * rowq
    A[q, :] = np.conj(s) * rowp + c * rowq
    A[p, q] = 0.0
    A[q, p] = 0.0
    A[p, p] = A[p, p].real
    A[q, q] = A[q, q].real
    vp = V[:, p].copy()
    vq = V[:, q].copy()
    V[:, p] = c * vp - np.conj(s) * vq
    V[:, q] = s * vp + c * vq


def hermitian_eigen(
    H,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    max_sweeps: int = 100,
) -> EigenSystem:
    """Eigendecomposition of a complex Hermitian matrix by cyclic Jacobi
    rotations with a fixed sweep order, so results are reproducible
    bit-for-bit for identical input.

    Eigenvalues come back sorted in decreasing order; within a degenerate
    block the solver's output order is kept (stable sort).
    """
    A = _as_complex_matrix(H)
    hdef = herm_defect(A)
    if hdef > tolerances.herm_tol:
        raise ValueError(f"matrix is not Hermitian (defect {hdef:.3e})")
    d = A.shape[0]
    A = hermitize(A)
    np.fill_diagonal(A, np.diag(A).real)
    V = np.eye(d, dtype=complex)
    scale = float(np.linalg.norm(A)) or 1.0
    stop = 1e-15 * scale
    converged = False
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(d - 1):
            row = np.abs(A[p, p + 1 :])
            if row.size:
                off = max(off, float(row.max()))
        if off <= stop:
            converged = True
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if abs(A[p, q]) > stop * 1e-2:
                    _jacobi_rotate(A, V, p, q)
    if not converged:
        raise EigenConvergenceError(
            f"Jacobi failed to converge within {max_sweeps} sweeps"
        )
    vals = np.diag(A).real.copy()
    order = np.argsort(-vals, kind="stable")
    return EigenSystem(eigenvalues=vals[order], eigenvectors=V[:, order])


def partial_trace(state, dims: tuple[int, int]) -> np.ndarray:
    """Trace out the second tensor factor of a bipartite pure state vector
    or density matrix on S (x) S', returning the reduced matrix on S.

    `dims` is (d_S, d_S'); a vector input of length d_S*d_S' is treated
    as a pure state, a square matrix of that size as a density matrix.
    """
    d_s, d_e = dims
    if d_s < 1 or d_e < 1:
        raise ValueError("subsystem dimensions must be positive")
    arr = np.asarray(state, dtype=complex)
    total = d_s * d_e
    if arr.ndim == 1:
        if arr.shape[0] != total:
            raise ValueError(
                f"vector length {arr.shape[0]} != d_S*d_S' = {total}"
            )
        psi = arr.reshape(d_s, d_e)
        return psi @ psi.conj().T
    if arr.ndim == 2:
        if arr.shape != (total, total):
            raise ValueError(
                f"matrix shape {arr.shape} != ({total}, {total})"
            )
        blocks = arr.reshape(d_s, d_e, d_s, d_e)
        return np.einsum("iaja->ij", blocks)
    raise ValueError("expected a vector or a square matrix")


def trace_moment(rho, m: int) -> float:
    """Tr[rho^m] as a real number; m must be a positive integer."""
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"moment order must be a positive integer, got {m}")
    A = _as_complex_matrix(rho)
    if m == 1:
        return float(np.trace(A).real)
    P = A
    for _ in range(m - 1):
        P = P @ A
    return float(np.trace(P).real)


def resolvent_trace(rho, x: float, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Tr[(1 - x*rho)^(-1)] for |x| < 1, computed from the eigenvalues as
    sum_a 1/(1 - x p_a)."""
    if not -1.0 < x < 1.0:
        raise ValueError(f"resolvent parameter must satisfy |x| < 1, got {x}")
    eigs = hermitian_eigen(hermitize(np.asarray(rho, dtype=complex)), tolerances).eigenvalues
    return float(np.sum(1.0 / (1.0 - x * eigs)))


def lift(op, env_dim: int) -> np.ndarray:
    """Lift an operator on S to S (x) S' as op tensor identity."""
    return np.kron(np.asarray(op, dtype=complex), np.eye(env_dim, dtype=complex))


sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
sigma_y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
sigma_z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
# lowering operator |0><1| in the (|0>, |1>) basis
sigma_minus = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    return np.outer(v, v.conj())


def matrix_to_json(arr) -> dict:
    """Serialize a complex vector or matrix as row-major [re, im] pairs
    with an explicit dim field (the shared wire schema)."""
    a = np.asarray(arr, dtype=complex)
    if a.ndim == 1:
        dim = [int(a.shape[0])]
    elif a.ndim == 2:
        dim = [int(a.shape[0]), int(a.shape[1])]
    else:
        raise ValueError("only vectors and matrices serialize")
    flat = a.reshape(-1)
    return {
        "dim": dim,
        "entries": [[float(z.real), float(z.imag)] for z in flat],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    dim = obj["dim"]
    entries = obj["entries"]
    expected = int(np.prod(dim))
    if len(entries) != expected:
        raise ValueError(
            f"entry count {len(entries)} does not match dim {dim}"
        )
    flat = np.array([complex(re, im) for re, im in entries], dtype=complex)
    arr = flat.reshape(dim)
    if not np.all(np.isfinite(arr.view(float))):
        raise ValueError("serialized matrix contains non-finite entries")
    return arr
