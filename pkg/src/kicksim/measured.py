"""Dynamics interrupted by projective energy measurements, and the rate map they reduce to.

With a measurement after every kick the amplitudes lose their phases and the
level populations follow the Markov chain

    P_n(t_{j+1}) = sum_m J_{m-n}(K)**2 P_m(t_j).

Two routes are provided: :func:`rate_step` iterates the chain on the whole
distribution, while :func:`evolve_measured` and
:func:`run_measured_ensemble` evolve amplitudes with the quantum map and
collapse them by Born-rule sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kicksim.bessel import KickKernel, stochastic_row, unitary_row
from kicksim.errors import ConfigurationError, EdgeLeakageError, KicksimError
from kicksim.model import ActionLattice, KickedSystem, free_phase, keyed_uniform
from kicksim.observables import Regime, SeriesRecorder, distribution_moments
from kicksim.quantum import (
    DEFAULT_EDGE_THRESHOLD,
    AmplitudeState,
    apply_kernel,
    check_edges,
    quantum_step,
)

_MEASURE_STREAM = 3


@dataclass(frozen=True)
class ProbabilityState:
    lattice: ActionLattice
    probs: np.ndarray
    step: int = 0

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.shape != (self.lattice.size,):
            raise ConfigurationError(
                f"probability vector has shape {p.shape}, lattice needs ({self.lattice.size},)"
            )
        if np.any(p < 0):
            raise ConfigurationError("probabilities must be nonnegative")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def probabilities(self) -> np.ndarray:
        return self.probs


def delta_distribution(lattice: ActionLattice, n0: int = 0) -> ProbabilityState:
    p = np.zeros(lattice.size)
    p[lattice.index(n0)] = 1.0
    return ProbabilityState(lattice, p, 0)


def dephase(state: AmplitudeState) -> ProbabilityState:
    """Drop all phase information: P_n = |a_n|**2."""
    return ProbabilityState(state.lattice, state.probabilities, state.step)


def rate_step(
    p: ProbabilityState,
    kernel: KickKernel,
    *,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
    row: np.ndarray | None = None,
) -> ProbabilityState:
    """One step of the J**2 Markov chain (fails fast on edge leakage)."""
    check_edges(p.probs, p.lattice, kernel.half_width, p.step, edge_threshold)
    if row is None:
        row = stochastic_row(kernel)
    out = apply_kernel(p.probs, row)
    # convolution of nonnegative inputs can round to -0.0 or tiny negatives
    np.maximum(out, 0.0, out=out)
    return ProbabilityState(p.lattice, out, p.step + 1)


def evolve_rate(p, kernel, steps, recorder=None, *, edge_threshold=DEFAULT_EDGE_THRESHOLD):
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    row = stochastic_row(kernel)
    if recorder is not None:
        recorder(p)
    for _ in range(steps):
        p = rate_step(p, kernel, edge_threshold=edge_threshold, row=row)
        if recorder is not None:
            recorder(p)
    return p


# --- projective measurement ----------------------------------------------------


def _sample_index(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    total = cdf[-1]
    if not total > 0:
        raise KicksimError("cannot measure a state with zero norm")
    return min(int(np.searchsorted(cdf, u * total, side="right")), len(probs) - 1)


def measure_collapse(state: AmplitudeState, rng) -> tuple[int, AmplitudeState]:
    """Born-rule energy measurement.

    ``rng`` is a :class:`numpy.random.Generator` (one uniform draw is consumed)
    or a uniform variate in [0, 1) supplied by the caller.  Returns the measured
    level and the collapsed basis state; the step counter is unchanged.
    """
    u = float(rng.random()) if hasattr(rng, "random") else float(rng)
    idx = _sample_index(state.probabilities, u)
    amps = np.zeros(state.lattice.size, dtype=complex)
    amps[idx] = 1.0
    return state.lattice.n_min + idx, AmplitudeState(state.lattice, amps, state.step)


def measurement_uniform(seed: int, trajectory, index):
    """Uniform variate used for measurement ``index`` of ``trajectory``."""
    return keyed_uniform(seed, _MEASURE_STREAM, trajectory, index)


@dataclass
class Trajectory:
    """Measured outcomes of one run: ``steps[i]`` is the step counter at measurement i."""

    steps: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    final_state: AmplitudeState | None = None


def evolve_measured(
    state: AmplitudeState,
    kernel: KickKernel,
    system: KickedSystem,
    steps: int,
    meas_period: int = 1,
    seed: int = 0,
    *,
    trajectory: int = 0,
    recorder=None,
    method: str = "direct",
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> Trajectory:
    """Kick ``meas_period`` times, measure, repeat, for ``steps`` kicks in total.

    Measurement draws are keyed by ``(seed, trajectory, measurement index)`` so a
    trajectory is reproducible on its own and matches the same trajectory
    index inside :func:`run_measured_ensemble`.  Kicks left over after the last
    full cycle are applied without a measurement.  ``recorder`` is called with
    each collapsed state.
    """
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    if meas_period < 1:
        raise ConfigurationError(f"meas_period must be >= 1, got {meas_period}")
    row = unitary_row(kernel, system.kick_convention)
    traj = Trajectory()
    for k in range(steps):
        state = quantum_step(
            state, kernel, system, method=method, edge_threshold=edge_threshold, row=row
        )
        if (k + 1) % meas_period == 0:
            u = measurement_uniform(seed, trajectory, len(traj.outcomes))
            n, state = measure_collapse(state, float(u))
            traj.steps.append(state.step)
            traj.outcomes.append(n)
            if recorder is not None:
                recorder(state)
    traj.final_state = state
    return traj


@dataclass(frozen=True)
class MeasuredEnsemble:
    """Outcomes of many independent measured trajectories.

    ``outcomes[i, t]`` is the level found by trajectory ``t`` at measurement
    ``i``, which happened at step counter ``steps[i]``.
    """

    lattice: ActionLattice
    steps: np.ndarray
    outcomes: np.ndarray
    meas_period: int

    @property
    def n_trajectories(self) -> int:
        return self.outcomes.shape[1]

    def histogram(self, i: int) -> np.ndarray:
        """Outcome counts over the lattice at measurement ``i``."""
        return np.bincount(self.outcomes[i] - self.lattice.n_min, minlength=self.lattice.size)

    def empirical(self, i: int) -> ProbabilityState:
        counts = self.histogram(i)
        return ProbabilityState(self.lattice, counts / counts.sum(), int(self.steps[i]))


def run_measured_ensemble(
    lattice: ActionLattice,
    kernel: KickKernel,
    system: KickedSystem,
    steps: int,
    meas_period: int = 1,
    n_trajectories: int = 1000,
    seed: int = 0,
    *,
    n0: int = 0,
    first_trajectory: int = 0,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> MeasuredEnsemble:
    """Vectorised :func:`evolve_measured` for ``n_trajectories`` runs from level ``n0``.

    Each trajectory is held in a window of width 2 s M + 1 around its last
    measured level, which covers everything s kicks can reach.  Only complete
    kick-measure cycles are simulated.
    """
    if kernel.K != system.kick_strength:
        raise ConfigurationError(
            f"kernel K={kernel.K} does not match system kick_strength={system.kick_strength}"
        )
    if steps < 0 or meas_period < 1 or n_trajectories < 1:
        raise ConfigurationError("need steps >= 0, meas_period >= 1 and n_trajectories >= 1")
    lattice.index(n0)
    s, M = meas_period, kernel.half_width
    n_meas = steps // s
    centre = s * M
    width = 2 * centre + 1
    rev = unitary_row(kernel, system.kick_convention)[::-1]
    traj_ids = np.arange(first_trajectory, first_trajectory + n_trajectories)
    cols = np.arange(width) - centre
    sites = np.full(n_trajectories, n0, dtype=np.int64)
    outcomes = np.empty((n_meas, n_trajectories), dtype=np.int64)
    meas_steps = np.arange(1, n_meas + 1) * s
    step = 0
    for i in range(n_meas):
        amps = np.zeros((n_trajectories, width), dtype=complex)
        amps[:, centre] = 1.0
        absn = sites[:, None] + cols[None, :]
        near_edge = (absn < lattice.n_min + M) | (absn > lattice.n_max - M)
        off = (absn < lattice.n_min) | (absn > lattice.n_max)
        for k in range(1, s + 1):
            if near_edge.any():
                mass = np.sum(np.abs(amps) ** 2 * near_edge, axis=1)
                worst = int(np.argmax(mass))
                if mass[worst] > edge_threshold:
                    big = lattice.enlarged(2)
                    raise EdgeLeakageError(step, float(mass[worst]), (big.n_min, big.n_max))
            lo_in, hi_in = centre - (k - 1) * M, centre + (k - 1) * M
            out = np.zeros_like(amps)
            src = amps[:, lo_in : hi_in + 1]
            for r in range(2 * M + 1):
                out[:, lo_in + r - M : hi_in + r - M + 1] += src * rev[r]
            lo, hi = centre - k * M, centre + k * M + 1
            phases = free_phase(system, absn[:, lo:hi], step)
            out[:, lo:hi] *= np.exp(-1j * phases)
            out[off] = 0.0
            amps = out
            step += 1
        cdf = np.cumsum(np.abs(amps) ** 2, axis=1)
        u = measurement_uniform(seed, traj_ids, i)
        idx = np.sum(cdf <= (u * cdf[:, -1])[:, None], axis=1)
        idx = np.minimum(idx, width - 1)
        sites = sites + cols[idx]
        outcomes[i] = sites
    outcomes.setflags(write=False)
    return MeasuredEnsemble(lattice, meas_steps, outcomes, s)


def ensemble_series(ens: MeasuredEnsemble, system: KickedSystem, edge_width: int = 0, n0: int = 0):
    """Observable series of the empirical outcome distributions (step 0 = the initial level)."""
    rec = SeriesRecorder(Regime.MONTE_CARLO_MEASURED, system, edge_width=edge_width)
    ns = ens.lattice.ns
    start = np.zeros(ens.lattice.size)
    start[ens.lattice.index(n0)] = 1.0
    rec.series.append(0, distribution_moments(ns, start, system, edge_width))
    for i, st in enumerate(ens.steps):
        counts = ens.histogram(i)
        rec.series.append(int(st), distribution_moments(ns, counts / counts.sum(), system, edge_width))
    return rec.series
