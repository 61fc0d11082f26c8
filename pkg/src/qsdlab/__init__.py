"""qsdlab: a simulator and property-testing laboratory for mixed-state
quantum state diffusion, with martingale diagnostics, an exact-semigroup
unraveling oracle, and spectral convergence analytics."""

from .config import ConfigError, PRESET_NAMES, RunConfig, preset
from .ensemble import EnsembleResult, run_ensemble
from .lindblad import Superoperator, evolve_exact, gksl_apply, superoperator, unraveling_check
from .linalg import (
    DensityValidationError,
    EigenSystem,
    Tolerances,
    check_density,
    hermitian_eigen,
    hermitize,
    lift,
    partial_trace,
    resolvent_trace,
    trace_moment,
    validate_density,
)
from .moments import (
    DoobMeyerLedger,
    doob_meyer_residual,
    ledger_update,
    moment_diffusion,
    moment_drift,
    power_step_oracle,
    resolvent_series_check,
    submartingale_test,
)
from .noise import ComplexIncrementBlock, NoiseStream, sample_increments, substream
from .spectrum import (
    LimitSpectrum,
    MomentMeasure,
    SpectrumTrace,
    convergence_diagnostic,
    limit_spectrum,
    mass_deficit,
    moment_measure,
    ordered_spectrum,
    spectrum_from_moments,
    weak_distance,
)
from .trajectory import (
    EffectiveOperators,
    ModelOperators,
    NumericalAbort,
    TrajectoryRecord,
    effective_operators,
    purification_check,
    run_trajectory,
    step_mixed,
    step_pure,
)

__version__ = "0.1.0"
