"""Kicked-system definition: unperturbed Hamiltonians, phase modes and the action lattice.

Units are hbar = m = e = 1 everywhere. A kicked system is

    H(I, theta, t) = H0(I) + K cos(theta) sum_j delta(t - j T)

and every dynamical regime in the package is driven by a :class:`KickedSystem`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from kicksim.errors import ConfigurationError, DomainError

TWO_PI = 2.0 * math.pi


# --- counter-based random numbers -------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x):
    return np.asarray(x, dtype=np.int64).astype(np.uint64)


def keyed_uniform(seed, *keys):
    """Uniform [0, 1) variates addressed by ``(seed, *keys)``.

    The value for a given key tuple does not depend on evaluation order or on
    how many other values were drawn, so phases and measurement draws can be
    generated per site, per step or per trajectory in any order.  Keys broadcast
    like numpy arrays; integers may be negative.
    """
    with np.errstate(over="ignore"):
        h = _splitmix(np.atleast_1d(_as_u64(seed)) + _GOLDEN)
        for k in keys:
            h = _splitmix(h ^ (np.atleast_1d(_as_u64(k)) + _GOLDEN))
    out = (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    shape = np.broadcast_shapes(np.shape(seed), *(np.shape(k) for k in keys))
    return out.reshape(shape)


# --- Hamiltonians -------------------------------------------------------------


@dataclass(frozen=True)
class Rotor:
    """Free rotor, H0(I) = I**2 / 2."""

    kind = "rotor"

    def energy(self, I):
        return 0.5 * np.square(I)

    def frequency(self, I):
        return np.asarray(I, dtype=float) * 1.0


@dataclass(frozen=True)
class LinearOscillator:
    """Linear oscillator, H0(I) = omega * I."""

    omega: float = 1.0
    kind = "linear"

    def energy(self, I):
        return self.omega * np.asarray(I, dtype=float)

    def frequency(self, I):
        return np.full(np.shape(I), float(self.omega))


@dataclass(frozen=True)
class PowerLaw:
    """H0(I) = c * |I|**p, an odd-symmetric frequency c p |I|**(p-1) sign(I).

    For ``p = 2, c = 1/2`` this coincides with :class:`Rotor`.
    """

    c: float = 1.0
    p: float = 2.0
    kind = "power"

    def __post_init__(self):
        if not self.p > 0:
            raise ConfigurationError(f"PowerLaw exponent p must be > 0, got {self.p}")

    def energy(self, I):
        return self.c * np.abs(np.asarray(I, dtype=float)) ** self.p

    def frequency(self, I):
        I = np.asarray(I, dtype=float)
        if self.p < 1 and np.any(I == 0):
            bad = np.flatnonzero(np.ravel(I) == 0)
            raise DomainError(
                f"PowerLaw frequency is singular at I=0 for p={self.p} < 1 (index {int(bad[0])})"
            )
        with np.errstate(divide="ignore"):
            return self.c * self.p * np.abs(I) ** (self.p - 1) * np.sign(I)


Hamiltonian = Union[Rotor, LinearOscillator, PowerLaw]


# --- phase modes --------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    """Free phases H0(n) T, the same at every step."""

    kind = "deterministic"


@dataclass(frozen=True)
class StaticRandom:
    """Free phases 2 pi g(n) with g(n) uniform, frozen across steps."""

    seed: int = 0
    kind = "static_random"


@dataclass(frozen=True)
class PerStepRandom:
    """Free phases 2 pi g(n, step), redrawn at every step."""

    seed: int = 0
    kind = "per_step_random"


PhaseMode = Union[Deterministic, StaticRandom, PerStepRandom]

# stream tags keep static and per-step phases uncorrelated for equal seeds
_STATIC_STREAM = 1
_PER_STEP_STREAM = 2


class KickConvention(str, enum.Enum):
    """Kernel entry convention.

    ``PAPER_LITERAL`` uses J_{m-n}(K); ``PHYSICAL_KICK`` uses (-i)**(m-n) J_{m-n}(K),
    the expansion of exp(-i K cos theta).  Squared kernels coincide.
    """

    PAPER_LITERAL = "paper_literal"
    PHYSICAL_KICK = "physical_kick"


@dataclass(frozen=True)
class KickedSystem:
    """Problem definition shared by the classical, quantum and measured maps."""

    hamiltonian: Hamiltonian = field(default_factory=Rotor)
    kick_strength: float = 5.0
    period: float = 1.0
    phase_mode: PhaseMode = field(default_factory=Deterministic)
    kick_convention: KickConvention = KickConvention.PAPER_LITERAL

    def __post_init__(self):
        if not isinstance(self.hamiltonian, (Rotor, LinearOscillator, PowerLaw)):
            raise ConfigurationError(f"unknown Hamiltonian kind: {self.hamiltonian!r}")
        if not isinstance(self.phase_mode, (Deterministic, StaticRandom, PerStepRandom)):
            raise ConfigurationError(f"unknown phase mode: {self.phase_mode!r}")
        if not (math.isfinite(self.kick_strength) and self.kick_strength >= 0):
            raise ConfigurationError(f"kick_strength must be >= 0, got {self.kick_strength}")
        if not (math.isfinite(self.period) and self.period > 0):
            raise ConfigurationError(f"period must be > 0, got {self.period}")
        object.__setattr__(self, "kick_convention", KickConvention(self.kick_convention))

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        h = self.hamiltonian
        ham = {"kind": h.kind}
        if isinstance(h, LinearOscillator):
            ham["omega"] = h.omega
        elif isinstance(h, PowerLaw):
            ham.update(c=h.c, p=h.p)
        mode = {"kind": self.phase_mode.kind}
        if not isinstance(self.phase_mode, Deterministic):
            mode["seed"] = self.phase_mode.seed
        return {
            "hamiltonian": ham,
            "kick_strength": self.kick_strength,
            "period": self.period,
            "phase_mode": mode,
            "kick_convention": self.kick_convention.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KickedSystem":
        try:
            ham = dict(data.get("hamiltonian", {"kind": "rotor"}))
            kind = ham.pop("kind")
            hams = {"rotor": Rotor, "linear": LinearOscillator, "power": PowerLaw}
            if kind not in hams:
                raise ConfigurationError(f"hamiltonian.kind: unknown Hamiltonian kind {kind!r}")
            mode = dict(data.get("phase_mode", {"kind": "deterministic"}))
            mkind = mode.pop("kind")
            modes = {
                "deterministic": Deterministic,
                "static_random": StaticRandom,
                "per_step_random": PerStepRandom,
            }
            if mkind not in modes:
                raise ConfigurationError(f"phase_mode.kind: unknown phase mode {mkind!r}")
            return cls(
                hamiltonian=hams[kind](**ham),
                kick_strength=float(data.get("kick_strength", 5.0)),
                period=float(data.get("period", 1.0)),
                phase_mode=modes[mkind](**mode),
                kick_convention=KickConvention(data.get("kick_convention", "paper_literal")),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"system: {exc}") from exc


@dataclass(frozen=True)
class ActionLattice:
    """Inclusive range of quantum numbers n_min..n_max."""

    n_min: int = -2048
    n_max: int = 2048

    def __post_init__(self):
        if not (int(self.n_min) == self.n_min and int(self.n_max) == self.n_max):
            raise ConfigurationError("lattice bounds must be integers")
        if not self.n_min <= 0 <= self.n_max:
            raise ConfigurationError(
                f"lattice must contain n=0, got [{self.n_min}, {self.n_max}]"
            )

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def ns(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def index(self, n: int) -> int:
        if not self.n_min <= n <= self.n_max:
            raise DomainError(f"n={n} is off the lattice [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def enlarged(self, factor: int = 2) -> "ActionLattice":
        return ActionLattice(self.n_min * factor - 1, self.n_max * factor + 1)


def free_phase(system: KickedSystem, n, step: int = 0):
    """Free-evolution phase (radians, in [0, 2 pi)) applied to level ``n`` at ``step``.

    ``n`` may be an integer or an integer array.
    """
    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    mode = system.phase_mode
    n = np.asarray(n)
    if isinstance(mode, Deterministic):
        phase = np.mod(system.hamiltonian.energy(n) * system.period, TWO_PI)
    elif isinstance(mode, StaticRandom):
        phase = TWO_PI * keyed_uniform(mode.seed, _STATIC_STREAM, n)
    elif isinstance(mode, PerStepRandom):
        phase = TWO_PI * keyed_uniform(mode.seed, _PER_STEP_STREAM, n, step)
    else:  # pragma: no cover - guarded in KickedSystem
        raise ConfigurationError(f"unknown phase mode: {mode!r}")
    # mod can round up to exactly 2 pi
    phase = np.where(phase >= TWO_PI, 0.0, phase)
    return float(phase) if phase.ndim == 0 else phase


def omega(system: KickedSystem, I):
    """Intrinsic frequency dH0/dI."""
    out = system.hamiltonian.frequency(I)
    return float(out) if np.ndim(out) == 0 else out
