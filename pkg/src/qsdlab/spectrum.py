"""Eigenvalue-path analytics: decreasing spectra along a trajectory,
tail-convergence diagnostics, moment measures, weak-convergence distances,
and reconstruction of a spectrum from its power-sum moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    DEFAULT_TOLERANCES,
    Tolerances,
    hermitian_eigen,
    hermitize,
)

__all__ = [
    "SpectrumTrace",
    "MomentMeasure",
    "LimitSpectrum",
    "ConvergenceDiagnostic",
    "ordered_spectrum",
    "spectrum_from_moments",
    "moment_measure",
    "weak_distance",
    "convergence_diagnostic",
    "limit_spectrum",
    "mass_deficit",
]


@dataclass(frozen=True)
class SpectrumTrace:
    """Eigenvalues along a trajectory, one non-increasing row per time.

    Rows are tracked by sorted position, not by eigenvector continuity,
    so level crossings show up as kinks in the individual paths."""

    times: np.ndarray
    values: np.ndarray  # (n_times, d), each row sorted descending


@dataclass(frozen=True)
class MomentMeasure:
    """Probability measure placing mass p_a at the value p_a for each
    eigenvalue; its m-th moment equals Tr[rho^(m+1)]."""

    atoms: np.ndarray
    masses: np.ndarray

    def integrate(self, fn) -> float:
        return float(np.sum(self.masses * fn(self.atoms)))

    def moment(self, m: int) -> float:
        return float(np.sum(self.masses * self.atoms**m))


@dataclass(frozen=True)
class LimitSpectrum:
    """Distinct limit eigenvalues q_1 > q_2 > ... > 0 with multiplicities;
    at finite dimension the mass deficit 1 - sum a_r q_r is expected to
    vanish (it can stay positive only in infinite dimension)."""

    values: np.ndarray
    multiplicities: np.ndarray


def ordered_spectrum(rho, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Eigenvalues of a density matrix sorted in decreasing order."""
    return hermitian_eigen(hermitize(np.asarray(rho, dtype=complex)), tolerances).eigenvalues


def spectrum_from_moments(kappa, d: int, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Recover the eigenvalue multiset of a d-dimensional state from its
    power sums kappa_m = Tr[rho^m], m = 1..d.

    Power sums convert to elementary symmetric polynomials through
    Newton's identities; the characteristic polynomial built from those
    is solved and its roots polished by a few Newton steps.  Conditioning
    of the inversion degrades with dimension, hence the d <= 8 limit.
    """
    kappa = np.asarray(kappa, dtype=float)
    if d < 1 or d > 8:
        raise ValueError(f"reconstruction supports 1 <= d <= 8, got {d}")
    if kappa.shape[0] < d:
        raise ValueError(f"need {d} moments, got {kappa.shape[0]}")
    if abs(kappa[0] - 1.0) > 1e-9:
        raise ValueError(f"first moment must be 1 within 1e-9, got {kappa[0]!r}")
    # Newton's identities: k*e_k = sum_{i=1}^{k} (-1)^(i-1) e_{k-i} p_i
    e = np.zeros(d + 1)
    e[0] = 1.0
    for k in range(1, d + 1):
        acc = 0.0
        for i in range(1, k + 1):
            acc += (-1.0) ** (i - 1) * e[k - i] * kappa[i - 1]
        e[k] = acc / k
    # char poly: lambda^d - e1 lambda^(d-1) + e2 lambda^(d-2) - ...
    coeffs = np.array([(-1.0) ** k * e[k] for k in range(d + 1)])
    roots = np.roots(coeffs)
    imag_span = float(np.abs(roots.imag).max()) if d > 1 else 0.0
    if imag_span > 1e-7:
        raise ValueError(
            f"inconsistent moment sequence: complex roots (imag up to {imag_span:.3e})"
        )
    vals = roots.real.copy()
    deriv = np.polyder(coeffs)
    for _ in range(3):  # Newton polish on the real axis
        pv = np.polyval(coeffs, vals)
        dv = np.polyval(deriv, vals)
        safe = np.abs(dv) > 1e-300
        vals[safe] -= pv[safe] / dv[safe]
    lo, hi = -10.0 * tolerances.eig_tol, 1.0 + 10.0 * tolerances.eig_tol
    if vals.min() < lo - 1e-7 or vals.max() > hi + 1e-7:
        raise ValueError(
            "inconsistent moment sequence: root outside [0, 1] "
            f"(range [{vals.min():.3e}, {vals.max():.3e}])"
        )
    vals = np.clip(vals, lo, 1.0)
    return np.sort(vals)[::-1]


def moment_measure(rho, tolerances: Tolerances = DEFAULT_TOLERANCES) -> MomentMeasure:
    """Measure with an atom of mass p at each eigenvalue p; atoms at zero
    carry no mass and are dropped."""
    p = ordered_spectrum(rho, tolerances)
    p = np.clip(p, 0.0, None)
    keep = p > 0.0
    return MomentMeasure(atoms=p[keep], masses=p[keep])


def _tent(x: np.ndarray, center: float, eps: float) -> np.ndarray:
    # 1 on [c-eps, c+eps], 0 outside (c-2eps, c+2eps), linear between
    return np.clip((2.0 * eps - np.abs(x - center)) / eps, 0.0, 1.0)


def weak_distance(mu_a: MomentMeasure, mu_b: MomentMeasure,
                  centers=None, widths=(0.01, 0.05, 0.1),
                  tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Weak-convergence distance approximated as the largest disagreement
    over a fixed dictionary of tent test functions (centers on a 0.01 grid
    of [0, 1], three widths) plus the identity function."""
    for mu in (mu_a, mu_b):
        if mu.atoms.size and (
            mu.atoms.min() < -tolerances.psd_tol or mu.atoms.max() > 1.0 + tolerances.psd_tol
        ):
            raise ValueError("measure has atoms outside [0, 1]")
    if centers is None:
        centers = np.linspace(0.0, 1.0, 101)
    best = abs(mu_a.integrate(lambda x: x) - mu_b.integrate(lambda x: x))
    for eps in widths:
        for c in centers:
            gap = abs(
                mu_a.integrate(lambda x: _tent(x, c, eps))
                - mu_b.integrate(lambda x: _tent(x, c, eps))
            )
            if gap > best:
                best = gap
    return float(best)


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    limits: np.ndarray        # tail-window mean per eigenvalue position
    oscillations: np.ndarray  # tail-window max - min per position
    window_points: int
    converged: bool


def convergence_diagnostic(trace: SpectrumTrace, tail_fraction: float = 0.2,
                           conv_tol: float = 1e-3) -> ConvergenceDiagnostic:
    """Limit estimate and residual oscillation of every eigenvalue path
    over the tail window (default: last 20% of the run)."""
    values = np.asarray(trace.values, dtype=float)
    n = values.shape[0]
    window = max(int(round(tail_fraction * n)), 1)
    if n < 2 * window:
        raise ValueError(
            f"run of {n} points too short for a tail window of {window}"
        )
    tail = values[n - window :]
    limits = tail.mean(axis=0)
    osc = tail.max(axis=0) - tail.min(axis=0)
    return ConvergenceDiagnostic(
        limits=limits,
        oscillations=osc,
        window_points=window,
        converged=bool(np.all(osc <= conv_tol)),
    )


def limit_spectrum(limits, cluster_tol: float = 1e-3) -> LimitSpectrum:
    """Group per-position limit estimates into distinct values with
    multiplicities; values indistinguishable from zero are dropped (they
    carry no mass)."""
    vals = np.sort(np.asarray(limits, dtype=float))[::-1]
    vals = vals[vals > cluster_tol]
    groups: list[list[float]] = []
    for v in vals:
        if groups and groups[-1][-1] - v <= cluster_tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    if not groups:
        return LimitSpectrum(values=np.empty(0), multiplicities=np.empty(0, dtype=int))
    return LimitSpectrum(
        values=np.array([float(np.mean(g)) for g in groups]),
        multiplicities=np.array([len(g) for g in groups], dtype=int),
    )


def mass_deficit(limits: LimitSpectrum) -> float:
    """1 - sum_r alpha_r q_r; a diagnostic that must be ~0 at finite
    dimension but can be strictly positive for infinite systems."""
    return float(1.0 - np.sum(limits.multiplicities * limits.values))
