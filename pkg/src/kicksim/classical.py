"""Classical action-angle map of the kicked system on a point ensemble.

    I_{j+1}     = I_j + K sin(theta_j)
    theta_{j+1} = theta_j + Omega(I_{j+1}) T      (mod 2 pi)

The angle update uses the *new* action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kicksim.errors import ConfigurationError, DomainError
from kicksim.model import TWO_PI, KickedSystem, omega


@dataclass(frozen=True)
class ClassicalEnsemble:
    actions: np.ndarray
    angles: np.ndarray
    step: int = 0
    seed: int | None = None

    def __post_init__(self):
        I = np.array(self.actions, dtype=float)
        th = np.array(self.angles, dtype=float)
        if I.ndim != 1 or I.shape != th.shape or I.size < 1:
            raise ConfigurationError("ensemble needs matching 1-d action and angle arrays of length >= 1")
        I.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "actions", I)
        object.__setattr__(self, "angles", th)

    def __len__(self):
        return self.actions.size


def _reduce_angle(theta):
    out = np.mod(theta, TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


def init_ensemble(count: int, I0: float = 0.0, seed: int = 0) -> ClassicalEnsemble:
    """``count`` points at action ``I0`` with i.i.d. uniform angles."""
    if count < 1:
        raise ConfigurationError(f"ensemble count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, TWO_PI, size=count)
    return ClassicalEnsemble(np.full(count, float(I0)), _reduce_angle(theta), 0, seed)


def classical_step(ens: ClassicalEnsemble, system: KickedSystem) -> ClassicalEnsemble:
    I = ens.actions + system.kick_strength * np.sin(ens.angles)
    try:
        freq = omega(system, I)
    except DomainError as exc:
        bad = np.flatnonzero(I == 0)
        idx = int(bad[0]) if bad.size else -1
        raise DomainError(f"point {idx} at step {ens.step}: {exc}") from exc
    theta = _reduce_angle(ens.angles + freq * system.period)
    return ClassicalEnsemble(I, theta, ens.step + 1, ens.seed)


def evolve_classical(ens, system, steps, recorder=None):
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    if recorder is not None:
        recorder(ens)
    for _ in range(steps):
        ens = classical_step(ens, system)
        if recorder is not None:
            recorder(ens)
    return ens


def variance_series(ens, system, steps):
    """``(step, Var(I))`` rows for steps 0..steps."""
    out = [(0, float(np.var(ens.actions)))]
    for _ in range(steps):
        ens = classical_step(ens, system)
        out.append((ens.step, float(np.var(ens.actions))))
    return np.array(out)
