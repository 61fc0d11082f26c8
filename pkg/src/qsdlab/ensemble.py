"""Ensemble orchestration: runs the configured number of trajectories,
optionally split across worker processes, and reduces the results in
trajectory-id order.

Chunking never changes numbers: each trajectory's noise is keyed by its
own (seed, trajectory_id) and the stepping kernels act row-wise, so any
partition of the id range reproduces identical per-trajectory output.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .lindblad import UnravelingReport, unraveling_check
from .moments import SubmartingaleReport, submartingale_test
from .trajectory import (
    BatchRecord,
    PurificationResult,
    TrajectoryRecord,
    purification_check,
    record_from_batch,
    run_mixed_batch,
    run_pure_batch,
)

__all__ = ["EnsembleResult", "run_ensemble"]


@dataclass
class EnsembleResult:
    config: RunConfig
    batch: BatchRecord                      # mixed-side records in purification mode
    purification_deviation: np.ndarray | None = None   # (N, G)

    @property
    def times(self) -> np.ndarray:
        return self.batch.times

    @property
    def n_traj(self) -> int:
        return self.batch.n_traj

    def record(self, row: int) -> TrajectoryRecord:
        return record_from_batch(self.batch, row)

    def order_index(self, m: int) -> int:
        return self.batch.orders.index(m)

    def submartingale_report(self, m: int, n_checkpoints: int = 10) -> SubmartingaleReport:
        i = self.order_index(m)
        return submartingale_test(
            self.batch.moments[:, :, i],
            self.batch.martingale[:, :, i],
            self.times,
            initial_moment=float(self.batch.moments[0, 0, i]),
            order=m,
            n_checkpoints=n_checkpoints,
        )

    def unraveling_report(self, min_trajectories: int = 500) -> UnravelingReport:
        if self.config.mode != "mixed":
            raise ValueError("unraveling check applies to mixed-mode runs")
        return unraveling_check(
            self.batch.states,
            self.times,
            self.config.initial_state,
            self.config.model,
            self.config.dt,
            min_trajectories=min_trajectories,
        )


def _concat_batches(parts: list[BatchRecord]) -> BatchRecord:
    first = parts[0]
    if len(parts) == 1:
        return first
    cat = lambda attr, axis=0: np.concatenate([getattr(p, attr) for p in parts], axis=axis)  # noqa: E731
    return BatchRecord(
        mode=first.mode,
        times=first.times,
        states=cat("states"),
        orders=first.orders,
        moments=cat("moments"),
        martingale=cat("martingale"),
        increasing=cat("increasing"),
        spectrum=cat("spectrum"),
        min_eig=cat("min_eig"),
        purity_residual=cat("purity_residual"),
        max_trace_defect=cat("max_trace_defect"),
        max_herm_defect=cat("max_herm_defect"),
        min_drift_integrand=cat("min_drift_integrand"),
        stream_ids=cat("stream_ids"),
        seed=first.seed,
        dt=first.dt,
        integrand_log=(
            None if first.integrand_log is None else cat("integrand_log", axis=1)
        ),
    )


def _run_chunk(config: RunConfig, ids: np.ndarray):
    n_steps = int(round(config.t_max / config.dt))
    if config.mode == "mixed":
        batch = run_mixed_batch(
            config.initial_state, config.model, config.dt, n_steps,
            config.seed, ids, config.record_stride, config.moment_orders,
            psd_hard=config.psd_hard,
        )
        return batch, None
    if config.mode == "pure":
        batch = run_pure_batch(
            config.initial_state, config.model, config.env_dim, config.dt,
            n_steps, config.seed, ids, config.record_stride,
            config.moment_orders,
        )
        return batch, None
    result: PurificationResult = purification_check(
        config.initial_state, config.model, config.env_dim, config.dt,
        config.t_max, config.seed, ids, config.record_stride,
        config.moment_orders, psd_hard=config.psd_hard,
    )
    return result.mixed, result.deviations


def run_ensemble(config: RunConfig) -> EnsembleResult:
    config.validate()
    all_ids = np.arange(config.n_traj, dtype=np.uint64)
    workers = config.n_workers if config.n_workers is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, config.n_traj))
    if workers == 1:
        parts = [_run_chunk(config, all_ids)]
    else:
        chunks = np.array_split(all_ids, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(chunks), chunks))
    batches = [p[0] for p in parts]
    deviations = [p[1] for p in parts]
    return EnsembleResult(
        config=config,
        batch=_concat_batches(batches),
        purification_deviation=(
            None if deviations[0] is None else np.concatenate(deviations, axis=0)
        ),
    )
