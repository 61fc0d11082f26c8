"""File emission and ingestion for completed runs.

CSV numbers are written as the shortest decimal string that round-trips
the underlying binary double (Python's repr), so identical runs produce
byte-identical files.  Rows are grouped by trajectory id, times ascending
within each block.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .ensemble import EnsembleResult
from .lindblad import evolve_exact
from .noise import dump_increments

__all__ = ["write_outputs", "LoadedRun", "load_run_dir", "GridMismatchError"]


class GridMismatchError(ValueError):
    """Record grids disagree across trajectories or files."""


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _state_columns(d: int) -> list[str]:
    cols = []
    for i in range(d):
        for j in range(d):
            cols += [f"rho_{i}_{j}_re", f"rho_{i}_{j}_im"]
    return cols


def write_outputs(result: EnsembleResult, out_dir) -> dict[str, str]:
    """Write every artifact of a completed run into out_dir; returns the
    emitted file paths keyed by kind."""
    from .report import RunData, build_report  # late import to avoid a cycle

    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    batch = result.batch
    d = batch.states.shape[-1]
    times = batch.times
    n_traj = batch.n_traj
    paths: dict[str, str] = {}

    cfg_path = os.path.join(out_dir, "config.json")
    cfg.save(cfg_path)
    paths["config"] = cfg_path

    ledger_header = ["t", "traj_id"]
    for m in batch.orders:
        ledger_header += [f"tr_rho_m{m}", f"M_{m}", f"S_{m}"]
    ledger_header += ["min_eig", "purity_residual"]

    def ledger_rows():
        for i in range(n_traj):
            tid = str(int(batch.stream_ids[i]))
            for g, t in enumerate(times):
                row = [_fmt(t), tid]
                for k in range(len(batch.orders)):
                    row += [
                        _fmt(batch.moments[i, g, k]),
                        _fmt(batch.martingale[i, g, k]),
                        _fmt(batch.increasing[i, g, k]),
                    ]
                row += [_fmt(batch.min_eig[i, g]), _fmt(batch.purity_residual[i, g])]
                yield row

    ledger_path = os.path.join(out_dir, "ledger.csv")
    _write_csv(ledger_path, ledger_header, ledger_rows())
    paths["ledger"] = ledger_path

    traj_header = ["t", "traj_id"] + _state_columns(d) + [
        "max_trace_defect", "max_herm_defect",
    ]

    def traj_rows():
        for i in range(n_traj):
            tid = str(int(batch.stream_ids[i]))
            for g, t in enumerate(times):
                row = [_fmt(t), tid]
                flat = batch.states[i, g].reshape(-1)
                for z in flat:
                    row += [_fmt(z.real), _fmt(z.imag)]
                row += [
                    _fmt(batch.max_trace_defect[i, g]),
                    _fmt(batch.max_herm_defect[i, g]),
                ]
                yield row

    traj_path = os.path.join(out_dir, "trajectory.csv")
    _write_csv(traj_path, traj_header, traj_rows())
    paths["trajectory"] = traj_path

    spec_header = ["t", "traj_id"] + [f"p_{a + 1}" for a in range(d)]

    def spec_rows():
        for i in range(n_traj):
            tid = str(int(batch.stream_ids[i]))
            for g, t in enumerate(times):
                yield [_fmt(t), tid] + [_fmt(v) for v in batch.spectrum[i, g]]

    spec_path = os.path.join(out_dir, "spectrum.csv")
    _write_csv(spec_path, spec_header, spec_rows())
    paths["spectrum"] = spec_path

    exact_states = None
    if cfg.mode == "mixed":
        exact_states = np.stack(
            [evolve_exact(cfg.initial_state, cfg.model, float(t)) for t in times]
        )
        exact_header = ["t"] + _state_columns(d)

        def exact_rows():
            for g, t in enumerate(times):
                row = [_fmt(t)]
                for z in exact_states[g].reshape(-1):
                    row += [_fmt(z.real), _fmt(z.imag)]
                yield row

        exact_path = os.path.join(out_dir, "lindblad_exact.csv")
        _write_csv(exact_path, exact_header, exact_rows())
        paths["lindblad_exact"] = exact_path

    if result.purification_deviation is not None:
        def purif_rows():
            for i in range(n_traj):
                tid = str(int(batch.stream_ids[i]))
                for g, t in enumerate(times):
                    yield [_fmt(t), tid, _fmt(result.purification_deviation[i, g])]

        purif_path = os.path.join(out_dir, "purification.csv")
        _write_csv(purif_path, ["t", "traj_id", "deviation"], purif_rows())
        paths["purification"] = purif_path

    if cfg.dump_increments and cfg.model.n_channels > 0:
        inc_path = os.path.join(out_dir, "increments.bin")
        n_steps = int(round(cfg.t_max / cfg.dt))
        dump_increments(inc_path, cfg.seed, 0, n_steps, cfg.model.n_channels, cfg.dt)
        paths["increments"] = inc_path

    data = RunData.from_result(result, exact_states=exact_states)
    report = build_report(data)
    report_path = os.path.join(out_dir, "ensemble.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["ensemble"] = report_path
    return paths


# ---------------------------------------------------------------------------
# Reading a run directory back
# ---------------------------------------------------------------------------

def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not data:
        return header, np.empty((0, len(header)))
    return header, np.array(data, dtype=float)


def _group_by_traj(header, table, n_value_cols):
    """Split a (t, traj_id, values...) table into per-trajectory blocks and
    verify every block sees the identical time grid."""
    t_col = table[:, 0]
    id_col = table[:, 1].astype(int)
    ids = []
    for tid in id_col:
        if not ids or ids[-1] != tid:
            ids.append(int(tid))
    if len(set(ids)) != len(ids):
        raise GridMismatchError("trajectory blocks are interleaved or duplicated")
    blocks_t = []
    blocks_v = []
    for tid in ids:
        mask = id_col == tid
        blocks_t.append(t_col[mask])
        blocks_v.append(table[mask, 2 : 2 + n_value_cols])
    ref = blocks_t[0]
    for tid, bt in zip(ids, blocks_t):
        if bt.shape != ref.shape or not np.array_equal(bt, ref):
            raise GridMismatchError(
                f"trajectory {tid} has {bt.shape[0]} rows where {ref.shape[0]} were expected"
            )
    return ref, np.array(ids), np.stack(blocks_v)


@dataclass
class LoadedRun:
    config: RunConfig
    config_doc: dict
    times: np.ndarray
    traj_ids: np.ndarray
    orders: tuple[int, ...]
    moments: np.ndarray
    martingale: np.ndarray
    increasing: np.ndarray
    min_eig: np.ndarray
    purity_residual: np.ndarray
    spectrum: np.ndarray
    states: np.ndarray
    max_trace_defect: np.ndarray
    max_herm_defect: np.ndarray
    exact_states: np.ndarray | None
    purification: np.ndarray | None


def load_run_dir(run_dir) -> LoadedRun:
    """Parse a completed run directory; raises FileNotFoundError for
    missing files and GridMismatchError for inconsistent grids."""
    cfg_path = os.path.join(run_dir, "config.json")
    with open(cfg_path) as fh:
        config_doc = json.load(fh)
    config = RunConfig.from_json_dict(config_doc)
    orders = config.moment_orders
    k = len(orders)

    header, table = _read_csv(os.path.join(run_dir, "ledger.csv"))
    times, ids, vals = _group_by_traj(header, table, 3 * k + 2)
    moments = vals[:, :, 0 : 3 * k : 3]
    martingale = vals[:, :, 1 : 3 * k : 3]
    increasing = vals[:, :, 2 : 3 * k : 3]
    min_eig = vals[:, :, 3 * k]
    purity_residual = vals[:, :, 3 * k + 1]

    header, table = _read_csv(os.path.join(run_dir, "spectrum.csv"))
    d = len(header) - 2
    times_s, ids_s, spec = _group_by_traj(header, table, d)
    if not np.array_equal(times_s, times) or not np.array_equal(ids_s, ids):
        raise GridMismatchError("spectrum.csv grid disagrees with ledger.csv")

    header, table = _read_csv(os.path.join(run_dir, "trajectory.csv"))
    times_r, ids_r, raw = _group_by_traj(header, table, 2 * d * d + 2)
    if not np.array_equal(times_r, times) or not np.array_equal(ids_r, ids):
        raise GridMismatchError("trajectory.csv grid disagrees with ledger.csv")
    n_traj, n_grid = raw.shape[:2]
    flat = raw[:, :, : 2 * d * d]
    states = (flat[:, :, 0::2] + 1j * flat[:, :, 1::2]).reshape(n_traj, n_grid, d, d)
    max_trace_defect = raw[:, :, 2 * d * d]
    max_herm_defect = raw[:, :, 2 * d * d + 1]

    exact_states = None
    exact_path = os.path.join(run_dir, "lindblad_exact.csv")
    if os.path.exists(exact_path):
        header, table = _read_csv(exact_path)
        if table.shape[0] != n_grid or not np.array_equal(table[:, 0], times):
            raise GridMismatchError("lindblad_exact.csv grid disagrees with ledger.csv")
        flat = table[:, 1 : 1 + 2 * d * d]
        exact_states = (flat[:, 0::2] + 1j * flat[:, 1::2]).reshape(n_grid, d, d)

    purification = None
    purif_path = os.path.join(run_dir, "purification.csv")
    if os.path.exists(purif_path):
        header, table = _read_csv(purif_path)
        times_p, ids_p, dev = _group_by_traj(header, table, 1)
        if not np.array_equal(times_p, times) or not np.array_equal(ids_p, ids):
            raise GridMismatchError("purification.csv grid disagrees with ledger.csv")
        purification = dev[:, :, 0]

    return LoadedRun(
        config=config,
        config_doc=config_doc,
        times=times,
        traj_ids=ids,
        orders=orders,
        moments=moments,
        martingale=martingale,
        increasing=increasing,
        min_eig=min_eig,
        purity_residual=purity_residual,
        spectrum=spec,
        states=states,
        max_trace_defect=max_trace_defect,
        max_herm_defect=max_herm_defect,
        exact_states=exact_states,
        purification=purification,
    )
