"""Scalar moment processes Tr[rho_t^m], their pathwise splitting into a
martingale part plus a non-decreasing part, ensemble martingale and
submartingale statistics, and a brute-force Ito-expansion oracle for the
matrix-power stochastic differentials.

All stochastic integrands are evaluated at the pre-step state (Ito,
non-anticipating); there is no Stratonovich correction anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import resolvent_trace, trace_moment

__all__ = [
    "DoobMeyerLedger",
    "moment_diffusion",
    "moment_drift",
    "moment_drift_terms",
    "ledger_update",
    "doob_meyer_residual",
    "power_step_oracle",
    "power_step_routes",
    "squared_state_update",
    "resolvent_series_check",
    "ResolventCheck",
    "submartingale_test",
    "SubmartingaleReport",
    "jackknife_se",
]


def _powers(rho: np.ndarray, top: int) -> list[np.ndarray]:
    # P[k] = rho^k, with P[0] the identity.
    d = rho.shape[-1]
    P = [np.eye(d, dtype=complex), np.asarray(rho, dtype=complex)]
    for _ in range(top - 1):
        P.append(P[-1] @ rho)
    return P


def moment_drift_terms(rho, eff, m: int) -> np.ndarray:
    """The bare drift summands Tr[rho^j Lt_k rho^(m-j) Lt_k^dag] for
    j = 1..m-1 and every channel k.  Each one equals a squared Frobenius
    norm, so up to rounding they are non-negative."""
    if m < 2:
        raise ValueError(f"moment order must be >= 2, got {m}")
    P = _powers(np.asarray(rho, dtype=complex), m)
    terms = []
    for L in eff.centered:
        Ld = L.conj().T
        for j in range(1, m):
            terms.append(float(np.trace(P[j] @ L @ P[m - j] @ Ld).real))
    return np.array(terms)


def moment_drift(rho, eff, m: int) -> float:
    """Drift rate of Tr[rho^m]: 2m * sum of the bare summands."""
    return float(2 * m * moment_drift_terms(rho, eff, m).sum())


def moment_diffusion(rho, eff, m: int, dB) -> float:
    """Signed stochastic increment of Tr[rho^m] for one step:
    2m * sum_k Re(Tr[rho^m Lt_k] dB_k)."""
    if m < 2:
        raise ValueError(f"moment order must be >= 2, got {m}")
    values = np.asarray(getattr(dB, "values", dB), dtype=complex)
    P = _powers(np.asarray(rho, dtype=complex), m)
    total = 0.0
    for L, b in zip(eff.centered, values):
        total += (np.trace(P[m] @ L) * b).real
    return float(2 * m * total)


@dataclass
class DoobMeyerLedger:
    """Running split Tr[rho_t^m] = M_t + S_t per tracked order.

    `martingale` starts at Tr[rho_0^m] and accumulates the stochastic
    increments; `increasing` starts at zero and accumulates drift * dt,
    so it is non-decreasing along every path.  `min_drift_integrand`
    tracks the most negative bare summand ever seen (should never drop
    below about -1e-12).  When `integrand_log` is a list, the per-step
    minimum summand for each order is appended to it.

    The *_path arrays are filled in by the trajectory runner at record
    points; on a live ledger they are None.
    """

    orders: tuple[int, ...]
    martingale: np.ndarray
    increasing: np.ndarray
    min_drift_integrand: np.ndarray
    integrand_log: list[np.ndarray] | None = None
    martingale_path: np.ndarray | None = None
    increasing_path: np.ndarray | None = None
    moment_path: np.ndarray | None = None

    @classmethod
    def start(cls, rho0, orders=(2, 3, 4), keep_log: bool = False) -> "DoobMeyerLedger":
        orders = tuple(int(m) for m in orders)
        if any(m < 2 for m in orders):
            raise ValueError(f"tracked orders must all be >= 2, got {orders}")
        m0 = np.array([trace_moment(rho0, m) for m in orders])
        return cls(
            orders=orders,
            martingale=m0,
            increasing=np.zeros(len(orders)),
            min_drift_integrand=np.zeros(len(orders)),
            integrand_log=[] if keep_log else None,
        )


def ledger_update(ledger: DoobMeyerLedger, rho_pre, eff, dB, dt: float) -> DoobMeyerLedger:
    """Advance the ledger by one step, evaluating every integrand at the
    pre-step state.  Mutates and returns the ledger."""
    step_min = np.empty(len(ledger.orders))
    for i, m in enumerate(ledger.orders):
        terms = moment_drift_terms(rho_pre, eff, m)
        ledger.martingale[i] += moment_diffusion(rho_pre, eff, m, dB)
        ledger.increasing[i] += 2 * m * terms.sum() * dt
        step_min[i] = terms.min()
    np.minimum(ledger.min_drift_integrand, step_min, out=ledger.min_drift_integrand)
    if ledger.integrand_log is not None:
        ledger.integrand_log.append(step_min)
    return ledger


def doob_meyer_residual(record) -> dict[int, float]:
    """Per tracked order, the worst pathwise defect
    max_t |Tr rho_t^m - M_t - S_t| over the record grid."""
    led = record.ledger
    if led.moment_path is None or led.martingale_path is None:
        raise ValueError("record ledger carries no paths")
    if led.moment_path.shape != led.martingale_path.shape:
        raise ValueError("ledger path grids disagree")
    gap = np.abs(led.moment_path - led.martingale_path - led.increasing_path)
    return {m: float(gap[:, i].max()) for i, m in enumerate(led.orders)}


# ---------------------------------------------------------------------------
# Matrix-power stochastic differential: expansion oracle and closed form
# ---------------------------------------------------------------------------

def _expansion_route(rho, eff, dB, dt, m):
    """Expand (rho + drho)^m - rho^m, apply the Ito products term by term
    (dB_k dB_l = 0, dB_k dB_l* = 2 delta_kl dt, dt*dB = dt^2 = 0) and drop
    what vanishes.  Returns (stochastic part, dt-proportional part)."""
    values = np.asarray(getattr(dB, "values", dB), dtype=complex)
    P = _powers(np.asarray(rho, dtype=complex), m)
    rho = P[1]
    Ht = eff.shifted_hamiltonian
    # drho = D + F dt with D the stochastic part
    D = np.zeros_like(rho)
    for L, b in zip(eff.centered, values):
        D += b * (L @ rho) + np.conj(b) * (rho @ L.conj().T)
    F = 1j * (rho @ Ht - Ht @ rho)
    for L in eff.centered:
        A = L.conj().T @ L
        F -= rho @ A + A @ rho - 2.0 * (L @ rho @ L.conj().T)
    stochastic = sum(P[r] @ D @ P[m - 1 - r] for r in range(m))
    drift = sum(P[r] @ F @ P[m - 1 - r] for r in range(m)) * dt
    # second-order term: sum over placements rho^a (D rho^b D) rho^c with the
    # Ito table applied to each (dB, dB) pair literally
    for a in range(m - 1):
        for c in range(m - 1 - a):
            b_pow = m - 2 - a - c
            inner = np.zeros_like(rho)
            for L in eff.centered:
                Arho = L @ rho
                rhoAd = rho @ L.conj().T
                # (A_k dB_k + C_k dB_k*) rho^b (A_k dB_k + C_k dB_k*):
                # only the mixed products survive, each worth 2 dt
                inner += 2.0 * dt * (Arho @ P[b_pow] @ rhoAd + rhoAd @ P[b_pow] @ Arho)
            drift += P[a] @ inner @ P[c]
    return stochastic, drift


def _closed_route(rho, eff, dB, dt, m):
    """Closed-form stochastic differential of rho^m.

    Drift = Ltilde-generator applied to rho^m plus two sandwich families:
    rho^m1 Lt rho^m2 Lt^dag rho^m3 over {m2 >= 1, m1 + m3 >= 1} and
    rho^m1 Lt^dag rho^m2 Lt rho^m3 over {m1, m2, m3 >= 1}, both with
    coefficient 2 and m1+m2+m3 = m.  This index resolution is the one
    that matches the term-by-term Ito expansion exactly (see the tests).
    """
    values = np.asarray(getattr(dB, "values", dB), dtype=complex)
    P = _powers(np.asarray(rho, dtype=complex), m)
    Ht = eff.shifted_hamiltonian
    stochastic = np.zeros_like(P[1])
    for L, b in zip(eff.centered, values):
        X = sum(P[r] @ L @ P[m - r] for r in range(m))
        stochastic += b * X + np.conj(b) * X.conj().T
    drift = 1j * (P[m] @ Ht - Ht @ P[m])
    for L in eff.centered:
        A = L.conj().T @ L
        drift -= P[m] @ A + A @ P[m] - 2.0 * (L @ P[m] @ L.conj().T)
    for L in eff.centered:
        Ld = L.conj().T
        for m1 in range(m):
            for m2 in range(1, m - m1 + 1):
                m3 = m - m1 - m2
                if m1 + m3 == 0:
                    continue
                drift += 2.0 * (P[m1] @ L @ P[m2] @ Ld @ P[m3])
        for m1 in range(1, m - 1):
            for m2 in range(1, m - m1):
                m3 = m - m1 - m2
                drift += 2.0 * (P[m1] @ Ld @ P[m2] @ L @ P[m3])
    return stochastic, drift * dt


def power_step_routes(rho, eff, dB, dt, m):
    """Both evaluations of d(rho^m): the literal Ito expansion and the
    closed form, each as (stochastic part, drift part)."""
    if m not in (2, 3):
        raise ValueError(f"power-step check supports m in (2, 3), got {m}")
    return _expansion_route(rho, eff, dB, dt, m), _closed_route(rho, eff, dB, dt, m)


def power_step_oracle(rho, eff, dB, dt, m) -> np.ndarray:
    """Difference (expansion minus closed form) of the full one-step
    increment of rho^m; agreement to rounding is the Theorem-level
    consistency check."""
    (ed, ef), (cd, cf) = power_step_routes(rho, eff, dB, dt, m)
    return (ed + ef) - (cd + cf)


def squared_state_update(rho, eff, dB, dt):
    """The displayed closed form of d(rho^2), hand-coded independently:
    stochastic part sum_k [(Lt rho^2 + rho Lt rho) dB + h.c.], drift
    Ltilde-generator of rho^2 plus 2 sum_k (rho Lt rho Lt^dag +
    Lt rho Lt^dag rho).  Returns (stochastic, drift*dt)."""
    values = np.asarray(getattr(dB, "values", dB), dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    rho2 = rho @ rho
    Ht = eff.shifted_hamiltonian
    stochastic = np.zeros_like(rho)
    for L, b in zip(eff.centered, values):
        X = L @ rho2 + rho @ L @ rho
        stochastic += b * X + np.conj(b) * X.conj().T
    drift = 1j * (rho2 @ Ht - Ht @ rho2)
    for L in eff.centered:
        A = L.conj().T @ L
        Ld = L.conj().T
        drift -= rho2 @ A + A @ rho2 - 2.0 * (L @ rho2 @ Ld)
        drift += 2.0 * (rho @ L @ rho @ Ld + L @ rho @ Ld @ rho)
    return stochastic, drift * dt


# ---------------------------------------------------------------------------
# Resolvent series check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolventCheck:
    max_residual: float
    max_tail_bound: float
    truncation_order: int


def resolvent_series_check(record, xs=(-0.9, -0.5, 0.5, 0.9), target: float = 1e-10,
                           max_states: int = 16) -> ResolventCheck:
    """Compare Tr[(1 - x rho)^(-1)] against the truncated moment series
    sum_{m=0}^{M} x^m Tr[rho^m] on states sampled from a trajectory
    record.  M is chosen so the geometric tail bound d |x|^{M+1}/(1-|x|)
    is at most `target` for the largest |x| requested."""
    xs = tuple(float(x) for x in xs)
    if any(abs(x) > 0.9 for x in xs):
        raise ValueError("series check restricted to |x| <= 0.9")
    states = record.states
    d = states.shape[-1]
    x_max = max(abs(x) for x in xs)
    order = int(np.ceil(np.log(target * (1.0 - x_max) / d) / np.log(x_max))) if x_max > 0 else 1
    stride = max(1, states.shape[0] // max_states)
    worst = 0.0
    worst_bound = 0.0
    for rho in states[::stride]:
        mom = np.empty(order + 1)
        mom[0] = d
        acc = np.asarray(rho, dtype=complex)
        mom[1] = np.trace(acc).real
        for m in range(2, order + 1):
            acc = acc @ rho
            mom[m] = np.trace(acc).real
        for x in xs:
            series = float(np.polynomial.polynomial.polyval(x, mom))
            resid = abs(resolvent_trace(rho, x) - series)
            bound = d * abs(x) ** (order + 1) / (1.0 - abs(x))
            worst = max(worst, resid)
            worst_bound = max(worst_bound, bound)
    return ResolventCheck(max_residual=worst, max_tail_bound=worst_bound,
                          truncation_order=order)


# ---------------------------------------------------------------------------
# Ensemble martingale / submartingale statistics
# ---------------------------------------------------------------------------

def jackknife_se(samples: np.ndarray) -> float:
    """Jackknife standard error of a plain mean (equals s/sqrt(N))."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 2:
        return float("nan")
    loo = (x.sum() - x) / (n - 1)
    center = loo.mean()
    return float(np.sqrt((n - 1) / n * ((loo - center) ** 2).sum()))


@dataclass
class SubmartingaleReport:
    order: int
    checkpoint_times: np.ndarray
    moment_means: np.ndarray
    martingale_means: np.ndarray
    martingale_ses: np.ndarray
    pair_gains: list[dict] = field(default_factory=list)
    martingale_ok: bool = True
    submartingale_ok: bool = True

    def describe(self) -> str:
        lines = [f"order m={self.order}:"]
        for entry in self.pair_gains:
            lines.append(
                "  mean gain {gain:+.5f} +- {se:.5f} over t=({s:.3g},{t:.3g}) -> {flag}".format(
                    gain=entry["gain"], se=entry["se"], s=entry["t_from"],
                    t=entry["t_to"], flag="ok" if entry["ok"] else "VIOLATION")
            )
        lines.append(
            f"  martingale constancy: {'ok' if self.martingale_ok else 'VIOLATION'}"
        )
        return "\n".join(lines)


def submartingale_test(moment_path, martingale_path, times, initial_moment,
                       order: int, checkpoints=None, n_checkpoints: int = 10,
                       min_trajectories: int = 100) -> SubmartingaleReport:
    """Ensemble test of the increase-on-average property and of martingale
    constancy.

    moment_path / martingale_path have shape (n_traj, n_grid).  For every
    consecutive checkpoint pair (s, t) the mean of Tr rho_t^m - Tr rho_s^m
    must be >= -3 standard errors; the mean of M_t must equal
    Tr rho_0^m within 3 standard errors at every checkpoint.
    """
    moment_path = np.asarray(moment_path, dtype=float)
    martingale_path = np.asarray(martingale_path, dtype=float)
    n_traj, n_grid = moment_path.shape
    if n_traj < min_trajectories:
        raise ValueError(
            f"need at least {min_trajectories} trajectories, got {n_traj}"
        )
    if checkpoints is None:
        checkpoints = np.unique(np.linspace(0, n_grid - 1, n_checkpoints).astype(int))
    checkpoints = np.asarray(checkpoints, dtype=int)
    times = np.asarray(times, dtype=float)

    mart_means = martingale_path[:, checkpoints].mean(axis=0)
    mart_ses = np.array([jackknife_se(martingale_path[:, c]) for c in checkpoints])
    mart_ok = bool(np.all(np.abs(mart_means - initial_moment) <= 3.0 * mart_ses))

    pair_gains = []
    sub_ok = True
    for a, b in zip(checkpoints[:-1], checkpoints[1:]):
        diff = moment_path[:, b] - moment_path[:, a]
        gain = float(diff.mean())
        se = jackknife_se(diff)
        ok = gain >= -3.0 * se
        sub_ok &= ok
        pair_gains.append({
            "t_from": float(times[a]), "t_to": float(times[b]),
            "gain": gain, "se": se, "ok": ok,
        })
    return SubmartingaleReport(
        order=order,
        checkpoint_times=times[checkpoints],
        moment_means=moment_path[:, checkpoints].mean(axis=0),
        martingale_means=mart_means,
        martingale_ses=mart_ses,
        pair_gains=pair_gains,
        martingale_ok=mart_ok,
        submartingale_ok=sub_ok,
    )
