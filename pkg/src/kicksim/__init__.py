"""Classical, quantum and measured dynamics of periodically kicked systems."""

__version__ = "0.1.0"

from kicksim.bessel import KickKernel, build_kick_kernel, stochastic_row, unitary_row
from kicksim.classical import ClassicalEnsemble, classical_step, init_ensemble
from kicksim.errors import (
    AnalysisError,
    ConfigurationError,
    DomainError,
    EdgeLeakageError,
    KicksimError,
    ResourceError,
)
from kicksim.measured import (
    ProbabilityState,
    dephase,
    evolve_measured,
    measure_collapse,
    rate_step,
    run_measured_ensemble,
)
from kicksim.model import (
    ActionLattice,
    Deterministic,
    KickConvention,
    KickedSystem,
    LinearOscillator,
    PerStepRandom,
    PowerLaw,
    Rotor,
    StaticRandom,
    free_phase,
    omega,
)
from kicksim.observables import (
    ObservableSeries,
    Regime,
    break_time_estimate,
    diffusion_fit,
    localization_length_fit,
    moments,
)
from kicksim.quantum import AmplitudeState, evolve_quantum, initial_delta_state, quantum_step
