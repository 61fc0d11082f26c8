"""Time integration of the state-diffusion equations: the mixed-state
Euler-Maruyama step, the pure-state step on a dilated space, trajectory
records, and the purification consistency check.

Post-processing per mixed step is hermitization plus trace
renormalization only.  Positivity is never projected back; the minimum
eigenvalue is monitored and a run aborts only when it falls below the
hard floor, which keeps the martingale diagnostics unbiased.

The batch runners integrate many trajectories at once as stacked arrays.
Every per-trajectory quantity depends only on (seed, stream_id), never on
which other trajectories share the batch, so results are identical for
any chunking of an ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .linalg import (
    DEFAULT_TOLERANCES,
    Tolerances,
    herm_defect,
    hermitize,
    lift,
    partial_trace,
)
from .moments import DoobMeyerLedger
from .noise import NoiseStream, step_block
from .spectrum import SpectrumTrace

__all__ = [
    "ModelOperators",
    "EffectiveOperators",
    "TrajectoryRecord",
    "PurificationResult",
    "NumericalAbort",
    "effective_operators",
    "step_mixed",
    "step_pure",
    "run_trajectory",
    "purification_check",
    "run_mixed_batch",
    "run_pure_batch",
    "BatchRecord",
    "record_indices",
    "DEFAULT_PSD_HARD",
]

DEFAULT_PSD_HARD = 1e-6
NORM_FLOOR = 0.5


class NumericalAbort(RuntimeError):
    """Integration left the admissible state set beyond the hard limits."""

    def __init__(self, message: str, step: int | None = None,
                 trajectory_id: int | None = None):
        detail = message
        if step is not None:
            detail += f" [step {step}]"
        if trajectory_id is not None:
            detail += f" [trajectory {trajectory_id}]"
        super().__init__(detail)
        self.step = step
        self.trajectory_id = trajectory_id


@dataclass(frozen=True)
class ModelOperators:
    """Hamiltonian and coupling operators defining the diffusion, all on
    the d-dimensional system space."""

    dim: int
    hamiltonian: np.ndarray
    couplings: tuple[np.ndarray, ...]

    def __post_init__(self):
        d = int(self.dim)
        H = np.asarray(self.hamiltonian, dtype=complex)
        if H.shape != (d, d):
            raise ValueError(f"Hamiltonian shape {H.shape} != ({d}, {d})")
        hdef = herm_defect(H)
        if hdef > DEFAULT_TOLERANCES.herm_tol:
            raise ValueError(f"Hamiltonian is not Hermitian (defect {hdef:.3e})")
        Ls = tuple(np.asarray(L, dtype=complex) for L in self.couplings)
        for i, L in enumerate(Ls):
            if L.shape != (d, d):
                raise ValueError(f"coupling {i} has shape {L.shape}, expected ({d}, {d})")
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "couplings", Ls)

    @property
    def n_channels(self) -> int:
        return len(self.couplings)

    def lifted(self, env_dim: int) -> "ModelOperators":
        """The same model acting on system (x) environment as op (x) identity."""
        return ModelOperators(
            dim=self.dim * env_dim,
            hamiltonian=lift(self.hamiltonian, env_dim),
            couplings=tuple(lift(L, env_dim) for L in self.couplings),
        )


@dataclass(frozen=True)
class EffectiveOperators:
    """State-dependent operators entering the diffusion: couplings
    centered to zero expectation and the expectation-shifted Hamiltonian."""

    centered: tuple[np.ndarray, ...]
    shifted_hamiltonian: np.ndarray
    expectations: np.ndarray


def effective_operators(rho, ops: ModelOperators) -> EffectiveOperators:
    """Build the centered couplings L_k - <L_k> and the shifted Hamiltonian
    H + i sum_k (L_k <L_k>* - L_k^dag <L_k>) for the given state, with
    <L_k> = Tr[rho L_k]."""
    rho = np.asarray(rho, dtype=complex)
    d = ops.dim
    if rho.shape != (d, d):
        raise ValueError(f"state shape {rho.shape} != ({d}, {d})")
    eye = np.eye(d, dtype=complex)
    exps = np.array([np.trace(rho @ L) for L in ops.couplings])
    centered = tuple(L - e * eye for L, e in zip(ops.couplings, exps))
    shift = np.zeros((d, d), dtype=complex)
    for L, e in zip(ops.couplings, exps):
        shift += L * np.conj(e) - L.conj().T * e
    return EffectiveOperators(
        centered=centered,
        shifted_hamiltonian=ops.hamiltonian + 1j * shift,
        expectations=exps,
    )


# ---------------------------------------------------------------------------
# Batched stepping kernels
# ---------------------------------------------------------------------------

def _stacks(ops: ModelOperators):
    d = ops.dim
    n = ops.n_channels
    L = np.stack(ops.couplings) if n else np.zeros((0, d, d), dtype=complex)
    Ld = L.conj().transpose(0, 2, 1)
    LdL_sum = np.einsum("kij,kjl->il", Ld, L) if n else np.zeros((d, d), dtype=complex)
    return L, Ld, LdL_sum


def _unitary_only(ops: ModelOperators) -> bool:
    return all(not np.any(L) for L in ops.couplings)


def _mixed_raw_step(rho, H, L, Ld, LdL_sum, eye, e, dB, dt):
    """One raw Euler-Maruyama update of a stack of states; returns the
    raw (un-postprocessed) states.  `e` holds Tr[rho L_k] per row."""
    # diffusion: W rho + rho W^dag with W = sum_k dB_k (L_k - e_k)
    W = np.einsum("nk,kij->nij", dB, L)
    W -= ((dB * e).sum(axis=1))[:, None, None] * eye
    diffusion = W @ rho + rho @ W.conj().transpose(0, 2, 1)
    cross_l = np.einsum("nk,kij->nij", e.conj(), L)
    cross_r = np.einsum("nk,kij->nij", e, Ld)
    Ht = H + 1j * (cross_l - cross_r)
    G = LdL_sum - cross_l - cross_r + (np.abs(e) ** 2).sum(axis=1)[:, None, None] * eye
    drift = 1j * (rho @ Ht - Ht @ rho) - (rho @ G + G @ rho)
    for k in range(L.shape[0]):
        Lt = L[k][None, :, :] - e[:, k, None, None] * eye
        drift += 2.0 * (Lt @ rho @ Lt.conj().transpose(0, 2, 1))
    return rho + diffusion + drift * dt


def _psd_floor_check(rho, psd_hard, step, stream_ids):
    """Abort if any state's minimum eigenvalue is below -psd_hard.  A
    Gershgorin lower bound screens the batch; only rows failing the
    screen pay for an exact eigenvalue solve."""
    diag = np.einsum("nii->ni", rho).real
    radius = np.abs(rho).sum(axis=2) - np.abs(np.einsum("nii->ni", rho))
    bound = (diag - radius).min(axis=1)
    suspect = np.nonzero(bound < -psd_hard)[0]
    if suspect.size:
        mins = np.linalg.eigvalsh(rho[suspect])[:, 0]
        worst = int(np.argmin(mins))
        if mins[worst] < -psd_hard:
            raise NumericalAbort(
                f"minimum eigenvalue {mins[worst]:.6e} fell below -{psd_hard:.1e}",
                step=step,
                trajectory_id=int(stream_ids[suspect[worst]]),
            )


def _batch_ledger_terms(P, e, L, Lt_list, dB, orders):
    """Per-step martingale increments, drift rates and the smallest bare
    drift summand for every tracked order, vectorized over the batch."""
    n_traj = P[1].shape[0]
    n_orders = len(orders)
    dM = np.zeros((n_traj, n_orders))
    rate = np.zeros((n_traj, n_orders))
    mins = np.zeros((n_traj, n_orders))
    if L.shape[0] == 0:
        return dM, rate, mins
    mins[:] = np.inf
    max_m = max(orders)
    traces = {m: np.einsum("nii->n", P[m]) for m in orders}
    for i, m in enumerate(orders):
        t_mk = np.einsum("nij,kji->nk", P[m], L) - e * traces[m][:, None]
        dM[:, i] = 2 * m * np.sum((t_mk * dB).real, axis=1)
    for Lt in Lt_list:
        LtH = Lt.conj().transpose(0, 2, 1)
        XA = {a: P[a] @ Lt for a in range(1, max_m)}
        YB = {b: P[b] @ LtH for b in range(1, max_m)}
        for i, m in enumerate(orders):
            for a in range(1, m):
                term = np.einsum("nij,nji->n", XA[a], YB[m - a]).real
                rate[:, i] += term
                np.minimum(mins[:, i], term, out=mins[:, i])
    rate *= 2.0 * np.asarray(orders, dtype=float)
    return dM, rate, mins


@dataclass
class BatchRecord:
    """Record-grid output of a batch run; first axis is the trajectory."""

    mode: str
    times: np.ndarray                 # (G,)
    states: np.ndarray                # (N, G, d, d); reduced states in pure mode
    orders: tuple[int, ...]
    moments: np.ndarray               # (N, G, K) power traces of the recorded states
    martingale: np.ndarray            # (N, G, K)
    increasing: np.ndarray            # (N, G, K)
    spectrum: np.ndarray              # (N, G, d) descending rows
    min_eig: np.ndarray               # (N, G)
    purity_residual: np.ndarray       # (N, G)
    max_trace_defect: np.ndarray      # (N, G) per-interval max raw conservation defect
    max_herm_defect: np.ndarray       # (N, G)
    min_drift_integrand: np.ndarray   # (N, K)
    stream_ids: np.ndarray
    seed: int
    dt: float
    integrand_log: np.ndarray | None = None   # (n_steps, N, K) when kept

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]


def record_indices(n_steps: int, stride: int) -> np.ndarray:
    idx = list(range(0, n_steps + 1, max(int(stride), 1)))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return np.asarray(idx, dtype=int)


def _snapshot(rec: BatchRecord, g, rho, M, S, trace_acc, herm_acc):
    spec = np.linalg.eigvalsh(rho)[:, ::-1]
    rec.states[:, g] = rho
    rec.spectrum[:, g] = spec
    rec.min_eig[:, g] = spec[:, -1]
    rec.purity_residual[:, g] = np.abs((spec**2).sum(axis=1) - 1.0)
    for i, m in enumerate(rec.orders):
        rec.moments[:, g, i] = (spec**m).sum(axis=1)
    rec.martingale[:, g] = M
    rec.increasing[:, g] = S
    rec.max_trace_defect[:, g] = trace_acc
    rec.max_herm_defect[:, g] = herm_acc


def _new_batch_record(mode, n_traj, d, rec_idx, orders, stream_ids, seed, dt, n_steps, keep_log):
    G = len(rec_idx)
    K = len(orders)
    return BatchRecord(
        mode=mode,
        times=rec_idx * dt,
        states=np.empty((n_traj, G, d, d), dtype=complex),
        orders=tuple(orders),
        moments=np.empty((n_traj, G, K)),
        martingale=np.empty((n_traj, G, K)),
        increasing=np.empty((n_traj, G, K)),
        spectrum=np.empty((n_traj, G, d)),
        min_eig=np.empty((n_traj, G)),
        purity_residual=np.empty((n_traj, G)),
        max_trace_defect=np.empty((n_traj, G)),
        max_herm_defect=np.empty((n_traj, G)),
        min_drift_integrand=np.zeros((n_traj, K)),
        stream_ids=np.asarray(stream_ids, dtype=np.uint64),
        seed=int(seed),
        dt=float(dt),
        integrand_log=np.zeros((n_steps, n_traj, K)) if keep_log else None,
    )


def run_mixed_batch(rho0, ops: ModelOperators, dt: float, n_steps: int,
                    seed: int, stream_ids, record_stride: int = 10,
                    orders=(2, 3, 4), psd_hard: float = DEFAULT_PSD_HARD,
                    increment_fn=None, keep_log: bool = False) -> BatchRecord:
    """Integrate the mixed-state equation for a batch of noise streams.

    `increment_fn(step) -> (N, n) complex` overrides the step increments;
    the default draws the stream's own step block.  Refinement studies
    pass a coarsening function here so every dt level rides the same
    Brownian path.
    """
    ids = np.asarray(stream_ids, dtype=np.uint64)
    n_traj = ids.shape[0]
    d = ops.dim
    n = ops.n_channels
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise ValueError(f"initial state shape {rho0.shape} != ({d}, {d})")
    L, Ld, LdL_sum = _stacks(ops)
    eye = np.eye(d, dtype=complex)
    H = ops.hamiltonian
    orders = tuple(int(m) for m in orders)
    max_m = max(orders)
    rec_idx = record_indices(n_steps, record_stride)
    rec = _new_batch_record("mixed", n_traj, d, rec_idx, orders, ids, seed, dt,
                            n_steps, keep_log)
    rec_set = {int(s): g for g, s in enumerate(rec_idx)}

    unitary = _unitary_only(ops)
    U = expm(-1j * H * dt) if unitary else None
    if increment_fn is None:
        increment_fn = lambda step: step_block(seed, ids, step, n, dt)  # noqa: E731

    rho = np.broadcast_to(rho0, (n_traj, d, d)).copy()
    M = np.tile([np.trace(np.linalg.matrix_power(rho0, m)).real for m in orders],
                (n_traj, 1))
    S = np.zeros((n_traj, len(orders)))
    trace_acc = np.zeros(n_traj)
    herm_acc = np.zeros(n_traj)
    mins_total = rec.min_drift_integrand

    for step in range(n_steps + 1):
        g = rec_set.get(step)
        if g is not None:
            _snapshot(rec, g, rho, M, S, trace_acc, herm_acc)
            trace_acc[:] = 0.0
            herm_acc[:] = 0.0
        if step == n_steps:
            break
        if unitary:
            raw = U @ rho @ U.conj().T
            if rec.integrand_log is not None:
                rec.integrand_log[step] = 0.0
        else:
            dB = increment_fn(step)
            e = np.einsum("nij,kji->nk", rho, L)
            P = {1: rho}
            for m in range(2, max_m + 1):
                P[m] = P[m - 1] @ rho
            Lt_list = [L[k][None, :, :] - e[:, k, None, None] * eye for k in range(n)]
            dM, rate, term_mins = _batch_ledger_terms(P, e, L, Lt_list, dB, orders)
            M += dM
            S += rate * dt
            np.minimum(mins_total, term_mins, out=mins_total)
            if rec.integrand_log is not None:
                rec.integrand_log[step] = term_mins
            raw = _mixed_raw_step(rho, H, L, Ld, LdL_sum, eye, e, dB, dt)
        tr = np.einsum("nii->n", raw)
        np.maximum(trace_acc, np.abs(tr - 1.0), out=trace_acc)
        raw_h = raw.conj().transpose(0, 2, 1)
        np.maximum(herm_acc, np.abs(raw - raw_h).max(axis=(1, 2)), out=herm_acc)
        rho = (raw + raw_h) / 2
        rho /= np.einsum("nii->n", rho).real[:, None, None]
        _psd_floor_check(rho, psd_hard, step, ids)
    return rec


def run_pure_batch(psi0, ops: ModelOperators, env_dim: int, dt: float,
                   n_steps: int, seed: int, stream_ids,
                   record_stride: int = 10, orders=(2, 3, 4),
                   increment_fn=None, keep_log: bool = False) -> BatchRecord:
    """Integrate the pure-state equation on system (x) environment with
    lifted operators; records carry the reduced system states."""
    ids = np.asarray(stream_ids, dtype=np.uint64)
    n_traj = ids.shape[0]
    d = ops.dim
    n = ops.n_channels
    env_dim = int(env_dim)
    D = d * env_dim
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (D,):
        raise ValueError(f"state vector length {psi0.shape} != d_S*d_S' = {D}")
    nrm = np.linalg.norm(psi0)
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError(f"initial vector norm {nrm!r} is not 1 within 1e-10")

    lifted = ops.lifted(env_dim)
    Lf, Ldf, LdLf_sum = _stacks(lifted)
    Hf = lifted.hamiltonian
    L, _, _ = _stacks(ops)
    eye = np.eye(d, dtype=complex)
    orders = tuple(int(m) for m in orders)
    max_m = max(orders)
    rec_idx = record_indices(n_steps, record_stride)
    rec = _new_batch_record("pure", n_traj, d, rec_idx, orders, ids, seed, dt,
                            n_steps, keep_log)
    rec_set = {int(s): g for g, s in enumerate(rec_idx)}

    unitary = _unitary_only(ops)
    Uf = expm(-1j * Hf * dt) if unitary else None
    if increment_fn is None:
        increment_fn = lambda step: step_block(seed, ids, step, n, dt)  # noqa: E731

    psi = np.broadcast_to(psi0, (n_traj, D)).copy()
    rho0 = partial_trace(psi0, (d, env_dim))
    M = np.tile([np.trace(np.linalg.matrix_power(rho0, m)).real for m in orders],
                (n_traj, 1))
    S = np.zeros((n_traj, len(orders)))
    norm_acc = np.zeros(n_traj)
    herm_acc = np.zeros(n_traj)   # reduced states are Hermitian by construction
    mins_total = rec.min_drift_integrand

    for step in range(n_steps + 1):
        g = rec_set.get(step)
        need_reduced = (g is not None) or (not unitary and step < n_steps)
        if need_reduced:
            blocks = psi.reshape(n_traj, d, env_dim)
            rho_red = np.einsum("nae,nbe->nab", blocks, blocks.conj())
        if g is not None:
            _snapshot(rec, g, rho_red, M, S, norm_acc, herm_acc)
            norm_acc[:] = 0.0
        if step == n_steps:
            break
        if unitary:
            raw = psi @ Uf.T
            if rec.integrand_log is not None:
                rec.integrand_log[step] = 0.0
        else:
            dB = increment_fn(step)
            e = np.einsum("nij,kji->nk", rho_red, L)
            P = {1: rho_red}
            for m in range(2, max_m + 1):
                P[m] = P[m - 1] @ rho_red
            Lt_list = [L[k][None, :, :] - e[:, k, None, None] * eye for k in range(n)]
            dM, rate, term_mins = _batch_ledger_terms(P, e, L, Lt_list, dB, orders)
            M += dM
            S += rate * dt
            np.minimum(mins_total, term_mins, out=mins_total)
            if rec.integrand_log is not None:
                rec.integrand_log[step] = term_mins
            Lpsi = np.einsum("kij,nj->nki", Lf, psi)
            Ldpsi = np.einsum("kij,nj->nki", Ldf, psi)
            Wpsi = np.einsum("nk,nki->ni", dB, Lpsi) - (dB * e).sum(axis=1)[:, None] * psi
            Htpsi = psi @ Hf.T + 1j * (
                np.einsum("nk,nki->ni", e.conj(), Lpsi)
                - np.einsum("nk,nki->ni", e, Ldpsi)
            )
            Gpsi = (
                psi @ LdLf_sum.T
                - np.einsum("nk,nki->ni", e.conj(), Lpsi)
                - np.einsum("nk,nki->ni", e, Ldpsi)
                + (np.abs(e) ** 2).sum(axis=1)[:, None] * psi
            )
            raw = psi + Wpsi - (1j * Htpsi + Gpsi) * dt
        norm2 = np.einsum("ni,ni->n", raw, raw.conj()).real
        np.maximum(norm_acc, np.abs(norm2 - 1.0), out=norm_acc)
        if norm2.min() < NORM_FLOOR**2:
            bad = int(np.argmin(norm2))
            raise NumericalAbort(
                f"state norm collapsed to {np.sqrt(norm2[bad]):.3e}",
                step=step, trajectory_id=int(ids[bad]),
            )
        psi = raw / np.sqrt(norm2)[:, None]
    return rec


# ---------------------------------------------------------------------------
# Single-state operations and records
# ---------------------------------------------------------------------------

def step_mixed(rho, ops: ModelOperators, dB, dt: float,
               psd_hard: float = DEFAULT_PSD_HARD) -> np.ndarray:
    """One Euler-Maruyama update of a single density matrix, followed by
    hermitization and trace renormalization."""
    values = np.asarray(getattr(dB, "values", dB), dtype=complex).reshape(-1)
    if values.shape[0] != ops.n_channels:
        raise ValueError(
            f"got {values.shape[0]} increments for {ops.n_channels} channels"
        )
    rho = np.asarray(rho, dtype=complex)
    L, Ld, LdL_sum = _stacks(ops)
    eye = np.eye(ops.dim, dtype=complex)
    batch = rho[None, :, :]
    if ops.n_channels == 0:
        raw = batch + (1j * (batch @ ops.hamiltonian - ops.hamiltonian @ batch)) * dt
    else:
        e = np.einsum("nij,kji->nk", batch, L)
        raw = _mixed_raw_step(batch, ops.hamiltonian, L, Ld, LdL_sum, eye,
                              e, values[None, :], dt)
    out = hermitize(raw[0])
    out /= np.trace(out).real
    min_eig = float(np.linalg.eigvalsh(out)[0])
    if min_eig < -psd_hard:
        raise NumericalAbort(
            f"minimum eigenvalue {min_eig:.6e} fell below -{psd_hard:.1e}"
        )
    return out


def step_pure(psi, ops: ModelOperators, env_dim: int, dB, dt: float) -> np.ndarray:
    """One Euler-Maruyama update of a unit vector on system (x)
    environment under the lifted operators, renormalized to unit norm."""
    values = np.asarray(getattr(dB, "values", dB), dtype=complex).reshape(-1)
    if values.shape[0] != ops.n_channels:
        raise ValueError(
            f"got {values.shape[0]} increments for {ops.n_channels} channels"
        )
    psi = np.asarray(psi, dtype=complex)
    d = ops.dim
    D = d * env_dim
    if psi.shape != (D,):
        raise ValueError(f"vector length {psi.shape} != {D}")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError(f"input norm {nrm!r} is not 1 within 1e-10")
    lifted = ops.lifted(env_dim)
    rho_red = partial_trace(psi, (d, env_dim))
    exps = np.array([np.trace(rho_red @ L) for L in ops.couplings])
    raw = psi.copy()
    drift = np.zeros(D, dtype=complex)
    for Lfull, e, b in zip(lifted.couplings, exps, values):
        Lt_psi = Lfull @ psi - e * psi
        raw += b * Lt_psi
        Ltd = Lfull.conj().T
        drift -= Ltd @ Lt_psi - np.conj(e) * Lt_psi
        # -i * (i * expectation shift) contributes without a factor of i
        drift += np.conj(e) * (Lfull @ psi) - e * (Ltd @ psi)
    drift -= 1j * (lifted.hamiltonian @ psi)
    raw += drift * dt
    nrm = np.linalg.norm(raw)
    if nrm < NORM_FLOOR:
        raise NumericalAbort(f"state norm collapsed to {nrm:.3e}")
    return raw / nrm


@dataclass
class TrajectoryRecord:
    """One trajectory on the record grid, with its pathwise ledger and
    eigenvalue trace."""

    mode: str
    times: np.ndarray
    states: np.ndarray
    ledger: DoobMeyerLedger
    spectrum: SpectrumTrace
    min_eig: np.ndarray
    purity_residual: np.ndarray
    max_trace_defect: np.ndarray
    max_herm_defect: np.ndarray
    seed: int
    stream_id: int
    dt: float


def record_from_batch(batch: BatchRecord, row: int) -> TrajectoryRecord:
    """View one batch row as a standalone trajectory record."""
    K = len(batch.orders)
    ledger = DoobMeyerLedger(
        orders=batch.orders,
        martingale=batch.martingale[row, -1].copy(),
        increasing=batch.increasing[row, -1].copy(),
        min_drift_integrand=batch.min_drift_integrand[row].copy(),
        integrand_log=(
            None if batch.integrand_log is None
            else [batch.integrand_log[s, row].copy()
                  for s in range(batch.integrand_log.shape[0])]
        ),
        martingale_path=batch.martingale[row].reshape(-1, K),
        increasing_path=batch.increasing[row].reshape(-1, K),
        moment_path=batch.moments[row].reshape(-1, K),
    )
    return TrajectoryRecord(
        mode=batch.mode,
        times=batch.times,
        states=batch.states[row],
        ledger=ledger,
        spectrum=SpectrumTrace(times=batch.times, values=batch.spectrum[row]),
        min_eig=batch.min_eig[row],
        purity_residual=batch.purity_residual[row],
        max_trace_defect=batch.max_trace_defect[row],
        max_herm_defect=batch.max_herm_defect[row],
        seed=batch.seed,
        stream_id=int(batch.stream_ids[row]),
        dt=batch.dt,
    )


def _steps_for(dt: float, t_max: float) -> int:
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_max < dt:
        raise ValueError(f"t_max must be at least dt, got t_max={t_max}, dt={dt}")
    return int(round(t_max / dt))


def run_trajectory(initial, ops: ModelOperators, dt: float, t_max: float,
                   stream: NoiseStream, record_stride: int = 10,
                   orders=(2, 3, 4), psd_hard: float = DEFAULT_PSD_HARD,
                   env_dim: int | None = None, keep_log: bool = False,
                   increment_fn=None) -> TrajectoryRecord:
    """Integrate a single trajectory over [0, t_max].

    A density-matrix `initial` runs the mixed-state equation; a vector
    runs the pure-state equation on system (x) environment and needs
    `env_dim`.  The result is deterministic given (stream.seed,
    stream.stream_id); the stream counter advances by the number of steps
    consumed.
    """
    n_steps = _steps_for(dt, t_max)
    ids = np.array([stream.stream_id], dtype=np.uint64)
    initial = np.asarray(initial, dtype=complex)
    if initial.ndim == 1:
        if env_dim is None:
            raise ValueError("pure-state runs need env_dim")
        batch = run_pure_batch(initial, ops, env_dim, dt, n_steps, stream.seed,
                               ids, record_stride, orders,
                               increment_fn=increment_fn, keep_log=keep_log)
    else:
        batch = run_mixed_batch(initial, ops, dt, n_steps, stream.seed, ids,
                                record_stride, orders, psd_hard=psd_hard,
                                increment_fn=increment_fn, keep_log=keep_log)
    if increment_fn is None:
        stream.counter += n_steps
    return record_from_batch(batch, 0)


@dataclass
class PurificationResult:
    """Gap between the reduced dilated-space trajectory and the mixed-state
    trajectory driven by the same noise."""

    times: np.ndarray
    deviations: np.ndarray       # (N, G) Frobenius norms
    max_deviation: float
    pure: BatchRecord
    mixed: BatchRecord


def purification_check(psi0, ops: ModelOperators, env_dim: int, dt: float,
                       t_max: float, seed: int, stream_ids=(0,),
                       record_stride: int = 10, orders=(2, 3, 4),
                       psd_hard: float = DEFAULT_PSD_HARD,
                       increment_fn=None) -> PurificationResult:
    """Run the pure-state equation (lifted operators) and the mixed-state
    equation from the reduced initial state on the same noise path, and
    measure max_t ||Tr_env |psi_t><psi_t| - rho_t||_F."""
    psi0 = np.asarray(psi0, dtype=complex)
    n_steps = _steps_for(dt, t_max)
    ids = np.asarray(stream_ids, dtype=np.uint64)
    rho0 = partial_trace(psi0, (ops.dim, env_dim))
    pure = run_pure_batch(psi0, ops, env_dim, dt, n_steps, seed, ids,
                          record_stride, orders, increment_fn=increment_fn)
    mixed = run_mixed_batch(rho0, ops, dt, n_steps, seed, ids, record_stride,
                            orders, psd_hard=psd_hard, increment_fn=increment_fn)
    gap = pure.states - mixed.states
    dev = np.sqrt(np.einsum("ngij,ngij->ng", gap, gap.conj()).real)
    return PurificationResult(
        times=pure.times,
        deviations=dev,
        max_deviation=float(dev.max()),
        pure=pure,
        mixed=mixed,
    )
