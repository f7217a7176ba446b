"""Amplitude map of the kicked system on a finite action lattice.

One kick followed by free evolution acts on the amplitudes as

    a_n <- exp(-i phi_n(step)) * sum_m a_m U_{m-n}

with U the kernel row from :mod:`kicksim.bessel` and phi_n the free phase of
:func:`kicksim.model.free_phase`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from kicksim.bessel import KickKernel, unitary_row
from kicksim.errors import ConfigurationError, EdgeLeakageError
from kicksim.model import ActionLattice, KickedSystem, free_phase

DEFAULT_EDGE_THRESHOLD = 1e-8
METHODS = ("direct", "fft")


@dataclass(frozen=True)
class AmplitudeState:
    lattice: ActionLattice
    amplitudes: np.ndarray
    step: int = 0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.lattice.size,):
            raise ConfigurationError(
                f"amplitude vector has shape {amps.shape}, lattice needs ({self.lattice.size},)"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self) -> float:
        return float(np.sum(self.probabilities))


def initial_delta_state(lattice: ActionLattice, n0: int = 0) -> AmplitudeState:
    amps = np.zeros(lattice.size, dtype=complex)
    amps[lattice.index(n0)] = 1.0
    return AmplitudeState(lattice, amps, 0)


def edge_mass(probs: np.ndarray, width: int) -> float:
    """Probability held in the outer ``width`` sites at either end."""
    if width <= 0:
        return 0.0
    width = min(width, len(probs) // 2)
    return float(np.sum(probs[:width]) + np.sum(probs[-width:]))


def check_edges(probs, lattice, width, step, threshold=DEFAULT_EDGE_THRESHOLD):
    mass = edge_mass(probs, width)
    if mass > threshold:
        big = lattice.enlarged(2)
        raise EdgeLeakageError(step, mass, (big.n_min, big.n_max))


def apply_kernel(values: np.ndarray, row: np.ndarray, method: str = "direct") -> np.ndarray:
    """out_n = sum_m values_m row_{m-n}, truncated to the input's index range.

    ``row`` is centred: entry ``d + M`` multiplies the offset d = m - n.
    The direct path only touches the nonzero support of ``values``.
    """
    M = (len(row) - 1) // 2
    size = len(values)
    rev = row[::-1]
    if method == "fft":
        full = fftconvolve(values, rev)
        return full[M : M + size]
    if method != "direct":
        raise ConfigurationError(f"unknown convolution method {method!r}; use one of {METHODS}")
    nz = np.flatnonzero(values)
    out = np.zeros(size, dtype=np.result_type(values, row))
    if nz.size == 0:
        return out
    lo, hi = nz[0], nz[-1]
    full = np.convolve(values[lo : hi + 1], rev)
    # full[k] sits at output index lo - M + k
    start = lo - M
    a, b = max(start, 0), min(start + len(full), size)
    out[a:b] = full[a - start : b - start]
    return out


def quantum_step(
    state: AmplitudeState,
    kernel: KickKernel,
    system: KickedSystem,
    *,
    method: str = "direct",
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
    row: np.ndarray | None = None,
) -> AmplitudeState:
    """Apply one kick and one free-evolution period.

    Raises:
        ConfigurationError: kernel and system disagree on K.
        EdgeLeakageError: too much probability near the lattice edges before the step.
    """
    if kernel.K != system.kick_strength:
        raise ConfigurationError(
            f"kernel K={kernel.K} does not match system kick_strength={system.kick_strength}"
        )
    check_edges(state.probabilities, state.lattice, kernel.half_width, state.step, edge_threshold)
    if row is None:
        row = unitary_row(kernel, system.kick_convention)
    kicked = apply_kernel(state.amplitudes, row, method)
    phases = free_phase(system, state.lattice.ns, state.step)
    return AmplitudeState(state.lattice, np.exp(-1j * phases) * kicked, state.step + 1)


def default_stride(steps: int) -> int:
    return 1 if steps <= 1000 else -(-steps // 1000)


def evolve_quantum(
    state: AmplitudeState,
    kernel: KickKernel,
    system: KickedSystem,
    steps: int,
    recorder=None,
    *,
    method: str = "direct",
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> AmplitudeState:
    """Apply :func:`quantum_step` ``steps`` times.

    ``recorder``, when given, is called with every state (including the initial
    one); it decides itself which steps to keep.  Edge errors carry the step
    index at which they occurred.
    """
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    row = unitary_row(kernel, system.kick_convention)
    if recorder is not None:
        recorder(state)
    for _ in range(steps):
        state = quantum_step(
            state, kernel, system, method=method, edge_threshold=edge_threshold, row=row
        )
        if recorder is not None:
            recorder(state)
    return state
