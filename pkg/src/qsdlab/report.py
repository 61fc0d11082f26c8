"""Aggregated pass/fail reporting over a completed run: pathwise
conservation and ledger checks, ensemble martingale statistics, the
unraveling comparison, and spectral convergence diagnostics.

The same builder serves the in-memory results of a fresh run and the
CSV files of a finished directory, so `qsdlab report` reproduces exactly
what the run itself wrote into ensemble.json.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .moments import jackknife_se, submartingale_test
from .spectrum import SpectrumTrace, convergence_diagnostic, limit_spectrum, mass_deficit

__all__ = ["RunData", "build_report", "report_run_dir", "format_report"]

# report-level thresholds
CONSERVATION_TOL = 1e-12      # per-step raw trace / hermiticity identities
INTEGRAND_FLOOR = -1e-12      # drift summands are squared norms up to rounding
MONOTONE_TOL = 1e-12
UNRAVEL_C_CAP = 10.0          # deviation <= 3 SE + C dt gate
CONV_TOL = 1e-3
TAIL_FRACTION = 0.2
MIN_TRAJ_MARTINGALE = 100
MIN_TRAJ_UNRAVELING = 500


@dataclass
class RunData:
    """Everything the report needs, whether it came from memory or disk."""

    mode: str
    dt: float
    psd_hard: float
    trace_tol: float
    psd_tol: float
    times: np.ndarray
    traj_ids: np.ndarray
    orders: tuple[int, ...]
    moments: np.ndarray          # (N, G, K)
    martingale: np.ndarray
    increasing: np.ndarray
    min_eig: np.ndarray          # (N, G)
    purity_residual: np.ndarray
    max_trace_defect: np.ndarray
    max_herm_defect: np.ndarray
    spectrum: np.ndarray         # (N, G, d)
    states: np.ndarray | None
    exact_states: np.ndarray | None
    purification: np.ndarray | None
    min_drift_integrand: np.ndarray | None   # (N, K); None when loaded from CSV

    @classmethod
    def from_result(cls, result, exact_states=None) -> "RunData":
        cfg = result.config
        b = result.batch
        return cls(
            mode=cfg.mode,
            dt=cfg.dt,
            psd_hard=cfg.psd_hard,
            trace_tol=cfg.tolerances.trace_tol,
            psd_tol=cfg.tolerances.psd_tol,
            times=b.times,
            traj_ids=b.stream_ids.astype(int),
            orders=b.orders,
            moments=b.moments,
            martingale=b.martingale,
            increasing=b.increasing,
            min_eig=b.min_eig,
            purity_residual=b.purity_residual,
            max_trace_defect=b.max_trace_defect,
            max_herm_defect=b.max_herm_defect,
            spectrum=b.spectrum,
            states=b.states,
            exact_states=exact_states,
            purification=result.purification_deviation,
            min_drift_integrand=b.min_drift_integrand,
        )

    @classmethod
    def from_loaded(cls, loaded) -> "RunData":
        cfg = loaded.config
        return cls(
            mode=cfg.mode,
            dt=cfg.dt,
            psd_hard=cfg.psd_hard,
            trace_tol=cfg.tolerances.trace_tol,
            psd_tol=cfg.tolerances.psd_tol,
            times=loaded.times,
            traj_ids=loaded.traj_ids,
            orders=loaded.orders,
            moments=loaded.moments,
            martingale=loaded.martingale,
            increasing=loaded.increasing,
            min_eig=loaded.min_eig,
            purity_residual=loaded.purity_residual,
            max_trace_defect=loaded.max_trace_defect,
            max_herm_defect=loaded.max_herm_defect,
            spectrum=loaded.spectrum,
            states=loaded.states,
            exact_states=loaded.exact_states,
            purification=loaded.purification,
            min_drift_integrand=None,
        )


def _conservation_section(data: RunData) -> dict:
    max_tr = float(data.max_trace_defect.max())
    max_h = float(data.max_herm_defect.max())
    min_e = float(data.min_eig.min())
    return {
        "max_trace_defect": max_tr,
        "max_herm_defect": max_h,
        "min_eigenvalue": min_e,
        "psd_hard": data.psd_hard,
        "pass": bool(max_tr <= CONSERVATION_TOL and max_h <= CONSERVATION_TOL
                     and min_e >= -data.psd_hard),
    }


def _doob_meyer_section(data: RunData) -> dict:
    per_order = {}
    ok = True
    for k, m in enumerate(data.orders):
        residual = float(
            np.abs(data.moments[:, :, k] - data.martingale[:, :, k]
                   - data.increasing[:, :, k]).max()
        )
        s_steps = np.diff(data.increasing[:, :, k], axis=1)
        monotone = float(s_steps.min()) if s_steps.size else 0.0
        start_gap = float(
            np.abs(data.martingale[:, 0, k] - data.moments[:, 0, k]).max()
        )
        entry = {
            "max_residual": residual,
            "min_increasing_step": monotone,
            "martingale_start_gap": start_gap,
            "monotone_pass": bool(monotone >= -MONOTONE_TOL),
            "start_pass": bool(start_gap == 0.0),
        }
        if data.min_drift_integrand is not None:
            worst = float(data.min_drift_integrand[:, k].min())
            entry["min_drift_integrand"] = worst
            entry["integrand_pass"] = bool(worst >= INTEGRAND_FLOOR)
            ok &= entry["integrand_pass"]
        ok &= entry["monotone_pass"] and entry["start_pass"]
        per_order[str(m)] = entry
    bound = float(data.moments.max())
    bounded = bool(bound <= 1.0 + 10.0 * data.psd_tol and data.moments.min() >= -10.0 * data.psd_tol)
    return {"orders": per_order, "max_moment": bound, "bounded_pass": bounded,
            "pass": bool(ok and bounded)}


def _martingale_section(data: RunData) -> dict:
    n_traj = data.moments.shape[0]
    if n_traj < MIN_TRAJ_MARTINGALE:
        return {"status": "insufficient trajectories",
                "required": MIN_TRAJ_MARTINGALE, "available": int(n_traj)}
    out = {"status": "ok", "orders": {}}
    ok = True
    for k, m in enumerate(data.orders):
        rep = submartingale_test(
            data.moments[:, :, k], data.martingale[:, :, k], data.times,
            initial_moment=float(data.moments[0, 0, k]), order=m,
        )
        out["orders"][str(m)] = {
            "martingale_ok": rep.martingale_ok,
            "submartingale_ok": rep.submartingale_ok,
            "checkpoint_times": [float(t) for t in rep.checkpoint_times],
            "martingale_means": [float(v) for v in rep.martingale_means],
            "mean_gains": [e["gain"] for e in rep.pair_gains],
        }
        ok &= rep.martingale_ok and rep.submartingale_ok
    out["pass"] = bool(ok)
    return out


def _unraveling_section(data: RunData) -> dict:
    if data.mode != "mixed" or data.exact_states is None or data.states is None:
        return {"status": "not applicable"}
    n_traj = data.states.shape[0]
    if n_traj < MIN_TRAJ_UNRAVELING:
        return {"status": "insufficient trajectories",
                "required": MIN_TRAJ_UNRAVELING, "available": int(n_traj)}
    total = data.states.sum(axis=0)
    deviation = np.empty(len(data.times))
    se = np.empty(len(data.times))
    for g in range(len(data.times)):
        mean = total[g] / n_traj
        exact = data.exact_states[g]
        deviation[g] = np.linalg.norm(mean - exact)
        loo = (total[g][None] - data.states[:, g]) / (n_traj - 1)
        gaps = np.sqrt(np.einsum("nij,nij->n", loo - exact, (loo - exact).conj()).real)
        se[g] = np.sqrt((n_traj - 1) / n_traj * ((gaps - gaps.mean()) ** 2).sum())
    gate = 3.0 * se + UNRAVEL_C_CAP * data.dt
    return {
        "status": "ok",
        "max_deviation": float(deviation.max()),
        "max_excess_over_3se": float(np.maximum(deviation - 3.0 * se, 0.0).max()),
        "c_cap": UNRAVEL_C_CAP,
        "pass": bool(np.all(deviation <= gate)),
    }


def _spectrum_section(data: RunData) -> dict:
    n_traj, n_grid, d = data.spectrum.shape
    row_sums = data.spectrum.sum(axis=2)
    sum_defect = float(np.abs(row_sums - 1.0).max())
    sorted_ok = bool(np.all(np.diff(data.spectrum, axis=2) <= 1e-12))
    section = {
        "max_row_sum_defect": sum_defect,
        "rows_sorted": sorted_ok,
        "pass": bool(sum_defect <= 10.0 * data.trace_tol and sorted_ok),
    }
    window = max(int(round(TAIL_FRACTION * n_grid)), 1)
    if n_grid >= 2 * window:
        converged = 0
        deficits = []
        for i in range(n_traj):
            diag = convergence_diagnostic(
                SpectrumTrace(times=data.times, values=data.spectrum[i]),
                tail_fraction=TAIL_FRACTION, conv_tol=CONV_TOL,
            )
            converged += int(diag.converged)
            deficits.append(mass_deficit(limit_spectrum(diag.limits, CONV_TOL)))
        section["converged_fraction"] = converged / n_traj
        section["mean_mass_deficit"] = float(np.mean(deficits))
        section["max_abs_mass_deficit"] = float(np.abs(deficits).max())
    else:
        section["convergence"] = "run too short for a tail window"
    return section


def _purification_section(data: RunData) -> dict:
    if data.purification is None:
        return {"status": "not applicable"}
    dev = data.purification
    return {
        "status": "ok",
        "max_deviation": float(dev.max()),
        "deviation_at_t0": float(np.abs(dev[:, 0]).max()),
        "mean_final_deviation": float(dev[:, -1].mean()),
        "se_final_deviation": jackknife_se(dev[:, -1]) if dev.shape[0] > 1 else None,
    }


def build_report(data: RunData) -> dict:
    sections = {
        "run": {
            "mode": data.mode,
            "dt": data.dt,
            "n_traj": int(data.moments.shape[0]),
            "n_record_points": int(len(data.times)),
            "t_max": float(data.times[-1]),
            "moment_orders": [int(m) for m in data.orders],
        },
        "grid": {"consistent": True},
        "conservation": _conservation_section(data),
        "doob_meyer": _doob_meyer_section(data),
        "martingale": _martingale_section(data),
        "unraveling": _unraveling_section(data),
        "spectrum": _spectrum_section(data),
        "purification": _purification_section(data),
    }
    decidable = [
        sec["pass"] for sec in sections.values()
        if isinstance(sec, dict) and "pass" in sec
    ]
    sections["overall_pass"] = bool(all(decidable))
    return sections


def report_run_dir(run_dir) -> dict:
    """Rebuild the aggregate report from a run directory's files.  A
    tampered or truncated CSV surfaces as grid.consistent = false."""
    from .output import GridMismatchError, load_run_dir

    try:
        loaded = load_run_dir(run_dir)
    except GridMismatchError as exc:
        return {
            "grid": {"consistent": False, "detail": str(exc)},
            "overall_pass": False,
        }
    return build_report(RunData.from_loaded(loaded))


def format_report(report: dict) -> str:
    """Human-readable one-line-per-check table."""
    lines = []
    add = lines.append
    grid = report.get("grid", {})
    add(f"{'grid consistent':<34} {grid.get('consistent')}")
    if not grid.get("consistent", False):
        add(f"  detail: {grid.get('detail', '')}")
        add(f"{'OVERALL':<34} FAIL")
        return "\n".join(lines)
    run = report["run"]
    add(f"{'run':<34} mode={run['mode']} n_traj={run['n_traj']} dt={run['dt']} t_max={run['t_max']}")
    cons = report["conservation"]
    add(f"{'conservation (trace/herm/psd)':<34} {'PASS' if cons['pass'] else 'FAIL'}"
        f"  trace={cons['max_trace_defect']:.2e} herm={cons['max_herm_defect']:.2e}"
        f" min_eig={cons['min_eigenvalue']:.2e}")
    dm = report["doob_meyer"]
    for m, entry in dm["orders"].items():
        add(f"{f'doob-meyer m={m}':<34} residual={entry['max_residual']:.3e}"
            f" monotone={'ok' if entry['monotone_pass'] else 'FAIL'}")
    add(f"{'doob-meyer overall':<34} {'PASS' if dm['pass'] else 'FAIL'}")
    mart = report["martingale"]
    if mart.get("status") == "ok":
        add(f"{'martingale/submartingale':<34} {'PASS' if mart['pass'] else 'FAIL'}")
    else:
        add(f"{'martingale/submartingale':<34} {mart.get('status')}")
    unr = report["unraveling"]
    if unr.get("status") == "ok":
        add(f"{'unraveling vs exact':<34} {'PASS' if unr['pass'] else 'FAIL'}"
            f"  max_dev={unr['max_deviation']:.3e}")
    else:
        add(f"{'unraveling vs exact':<34} {unr.get('status')}")
    spec = report["spectrum"]
    extra = ""
    if "converged_fraction" in spec:
        extra = (f"  converged={spec['converged_fraction']:.2%}"
                 f" deficit={spec['mean_mass_deficit']:.2e}")
    add(f"{'spectrum rows':<34} {'PASS' if spec['pass'] else 'FAIL'}{extra}")
    purif = report["purification"]
    if purif.get("status") == "ok":
        add(f"{'purification deviation':<34} max={purif['max_deviation']:.3e}")
    add(f"{'OVERALL':<34} {'PASS' if report['overall_pass'] else 'FAIL'}")
    return "\n".join(lines)
