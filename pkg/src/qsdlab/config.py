"""Run configuration: JSON schema, validation, and scenario presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DensityValidationError,
    Tolerances,
    ket,
    matrix_from_json,
    matrix_to_json,
    sigma_minus,
    sigma_z,
    validate_density,
)
from .trajectory import DEFAULT_PSD_HARD, ModelOperators

__all__ = ["RunConfig", "ConfigError", "preset", "PRESET_NAMES"]

MODES = ("mixed", "pure", "purification-check")

PRESET_NAMES = (
    "dephasing-qubit",
    "amplitude-damping-qubit",
    "two-channel-qutrit",
    "purification-bell",
)


class ConfigError(ValueError):
    """Invalid run configuration; `field` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class RunConfig:
    mode: str
    model: ModelOperators
    initial_state: np.ndarray
    dt: float
    t_max: float
    record_stride: int = 10
    n_traj: int = 1
    seed: int = 0
    moment_orders: tuple[int, ...] = (2, 3, 4)
    tolerances: Tolerances = field(default_factory=Tolerances)
    psd_hard: float = DEFAULT_PSD_HARD
    env_dim: int | None = None
    n_workers: int | None = None
    out_dir: str | None = None
    dump_increments: bool = False

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0.0:
            raise ConfigError("dt", f"must be > 0, got {self.dt!r}")
        if self.t_max < self.dt:
            raise ConfigError("t_max", f"must be >= dt, got {self.t_max!r}")
        if self.record_stride < 1:
            raise ConfigError("record_stride", f"must be >= 1, got {self.record_stride!r}")
        if self.n_traj < 1:
            raise ConfigError("n_traj", f"must be >= 1, got {self.n_traj!r}")
        if any(m < 2 for m in self.moment_orders):
            raise ConfigError("moment_orders", f"all orders must be >= 2, got {self.moment_orders!r}")
        if self.psd_hard <= 0.0:
            raise ConfigError("psd_hard", f"must be > 0, got {self.psd_hard!r}")
        if self.n_workers is not None and self.n_workers < 1:
            raise ConfigError("n_workers", f"must be >= 1, got {self.n_workers!r}")
        state = np.asarray(self.initial_state, dtype=complex)
        if self.mode == "mixed":
            if state.ndim != 2:
                raise ConfigError("initial_state", "mixed mode needs a density matrix")
            try:
                validate_density(state, self.tolerances)
            except DensityValidationError as exc:
                raise ConfigError("initial_state", str(exc)) from exc
        else:
            if state.ndim != 1:
                raise ConfigError("initial_state", f"{self.mode} mode needs a state vector")
            if self.env_dim is None or self.env_dim < 1:
                raise ConfigError("env_dim", f"{self.mode} mode needs env_dim >= 1")
            if state.shape[0] != self.model.dim * self.env_dim:
                raise ConfigError(
                    "initial_state",
                    f"length {state.shape[0]} != dim*env_dim = {self.model.dim * self.env_dim}",
                )
            nrm = float(np.linalg.norm(state))
            if abs(nrm - 1.0) > 1e-10:
                raise ConfigError("initial_state", f"norm {nrm!r} is not 1 within 1e-10")
        return self

    def to_json_dict(self) -> dict:
        doc = {
            "mode": self.mode,
            "model": {
                "dim": self.model.dim,
                "hamiltonian": matrix_to_json(self.model.hamiltonian),
                "couplings": [matrix_to_json(L) for L in self.model.couplings],
            },
            "initial_state": matrix_to_json(self.initial_state),
            "dt": self.dt,
            "t_max": self.t_max,
            "record_stride": self.record_stride,
            "n_traj": self.n_traj,
            "seed": self.seed,
            "moment_orders": list(self.moment_orders),
            "tolerances": {
                "herm_tol": self.tolerances.herm_tol,
                "trace_tol": self.tolerances.trace_tol,
                "psd_tol": self.tolerances.psd_tol,
                "eig_tol": self.tolerances.eig_tol,
            },
            "psd_hard": self.psd_hard,
            "env_dim": self.env_dim,
            "n_workers": self.n_workers,
            "dump_increments": self.dump_increments,
        }
        if self.out_dir is not None:
            doc["out_dir"] = self.out_dir
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        missing = object()

        def grab(name, default=missing):
            if name in doc:
                return doc[name]
            if default is missing:
                raise ConfigError(name, "missing required field")
            return default

        model_doc = grab("model")
        try:
            model = ModelOperators(
                dim=int(model_doc["dim"]),
                hamiltonian=matrix_from_json(model_doc["hamiltonian"]),
                couplings=tuple(matrix_from_json(L) for L in model_doc.get("couplings", [])),
            )
        except ConfigError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("model", str(exc)) from exc
        try:
            initial = matrix_from_json(grab("initial_state"))
        except ConfigError:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("initial_state", str(exc)) from exc
        tol_doc = grab("tolerances", {})
        tolerances = Tolerances(
            herm_tol=float(tol_doc.get("herm_tol", 1e-10)),
            trace_tol=float(tol_doc.get("trace_tol", 1e-10)),
            psd_tol=float(tol_doc.get("psd_tol", 1e-9)),
            eig_tol=float(tol_doc.get("eig_tol", 1e-10)),
        )
        env_dim = grab("env_dim", None)
        n_workers = grab("n_workers", None)
        cfg = cls(
            mode=str(grab("mode")),
            model=model,
            initial_state=initial,
            dt=float(grab("dt")),
            t_max=float(grab("t_max")),
            record_stride=int(grab("record_stride", 10)),
            n_traj=int(grab("n_traj", 1)),
            seed=int(grab("seed", 0)),
            moment_orders=tuple(int(m) for m in grab("moment_orders", [2, 3, 4])),
            tolerances=tolerances,
            psd_hard=float(grab("psd_hard", DEFAULT_PSD_HARD)),
            env_dim=None if env_dim is None else int(env_dim),
            n_workers=None if n_workers is None else int(n_workers),
            out_dir=grab("out_dir", None),
            dump_increments=bool(grab("dump_increments", False)),
        )
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<document>", f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("<document>", "top level must be a JSON object")
        return cls.from_json_dict(doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def preset(name: str) -> RunConfig:
    """Fully populated scenario configs exercising the different dynamical
    regimes.  Boundary-state models carry a loose positivity floor: an
    unprojected Euler step next to a pure state fluctuates its smallest
    eigenvalue at order dt, which is physics-free discretization noise."""
    zero2 = np.zeros((2, 2), dtype=complex)
    if name == "dephasing-qubit":
        cfg = RunConfig(
            mode="mixed",
            model=ModelOperators(dim=2, hamiltonian=zero2, couplings=(sigma_z,)),
            initial_state=np.diag([0.7, 0.3]).astype(complex),
            dt=1e-3,
            t_max=10.0,
            n_traj=200,
            seed=20260809,
        )
    elif name == "amplitude-damping-qubit":
        cfg = RunConfig(
            mode="mixed",
            model=ModelOperators(dim=2, hamiltonian=zero2, couplings=(sigma_minus,)),
            initial_state=np.diag([0.0, 1.0]).astype(complex),
            dt=1e-3,
            t_max=3.0,
            n_traj=200,
            seed=20260810,
            psd_hard=5e-2,
        )
    elif name == "two-channel-qutrit":
        ladder01 = np.zeros((3, 3), dtype=complex)
        ladder01[0, 1] = 1.0
        ladder12 = np.zeros((3, 3), dtype=complex)
        ladder12[1, 2] = 1.0
        H = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2.0)
        cfg = RunConfig(
            mode="mixed",
            model=ModelOperators(dim=3, hamiltonian=H, couplings=(ladder01, ladder12)),
            initial_state=np.eye(3, dtype=complex) / 3.0,
            dt=1e-3,
            t_max=5.0,
            n_traj=200,
            seed=20260811,
            psd_hard=5e-2,
        )
    elif name == "purification-bell":
        bell = (np.kron(ket(0, 2), ket(0, 2)) + np.kron(ket(1, 2), ket(1, 2))) / np.sqrt(2.0)
        cfg = RunConfig(
            mode="purification-check",
            model=ModelOperators(dim=2, hamiltonian=zero2, couplings=(sigma_z,)),
            initial_state=bell,
            env_dim=2,
            dt=1e-3,
            t_max=1.0,
            n_traj=20,
            seed=20260812,
            psd_hard=5e-2,
        )
    else:
        raise ConfigError(
            "preset", f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    return cfg.validate()
