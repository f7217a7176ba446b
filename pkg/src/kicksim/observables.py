"""Moments, observable series and fits shared by every dynamical regime.

Conventions used throughout:

* diffusion: Var = 2 B t with t = step * T, so B = slope / 2;
* localization length: P_n ~ exp(-2 |n - n0| / ell), i.e. ell is the
  amplitude decay length.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from kicksim.errors import AnalysisError
from kicksim.model import KickedSystem

COLUMNS = ("step", "mean_n", "var_n", "energy", "participation_ratio", "edge_mass")
DEFAULT_FIT_WINDOW = (5, 100)


class Regime(str, enum.Enum):
    CLASSICAL = "Classical"
    QUANTUM_DETERMINISTIC = "QuantumDeterministic"
    QUANTUM_STATIC_RANDOM = "QuantumStaticRandom"
    QUANTUM_PER_STEP_RANDOM = "QuantumPerStepRandom"
    RATE_EQUATION = "RateEquation"
    MONTE_CARLO_MEASURED = "MonteCarloMeasured"


@dataclass(frozen=True)
class Moments:
    mean_n: float
    var_n: float
    energy: float
    participation_ratio: float
    edge_mass: float


def distribution_moments(ns, probs, system: Optional[KickedSystem] = None, edge_width: int = 0):
    """Moments of a normalized distribution ``probs`` over integer levels ``ns``."""
    ns = np.asarray(ns, dtype=float)
    probs = np.asarray(probs, dtype=float)
    mean = float(np.dot(ns, probs))
    var = max(float(np.dot((ns - mean) ** 2, probs)), 0.0)
    energy = float(np.dot(system.hamiltonian.energy(ns), probs)) if system is not None else math.nan
    pr = 1.0 / float(np.dot(probs, probs))
    if edge_width > 0:
        w = min(edge_width, len(probs) // 2)
        edge = float(np.sum(probs[:w]) + np.sum(probs[-w:]))
    else:
        edge = 0.0
    return Moments(mean, var, energy, max(pr, 1.0), min(max(edge, 0.0), 1.0))


def moments(state, system: Optional[KickedSystem] = None, edge_width: int = 0) -> Moments:
    """Moments of an amplitude or probability state.

    ``edge_width`` is the width of the outer bands counted in ``edge_mass``
    (normally the kernel half-width).  Classical ensembles are histogrammed on
    integer actions for the participation ratio; their edge mass is zero.
    """
    actions = getattr(state, "actions", None)
    if actions is not None:
        energy = float(np.mean(system.hamiltonian.energy(actions))) if system is not None else math.nan
        _, counts = np.unique(np.rint(actions), return_counts=True)
        p = counts / counts.sum()
        return Moments(
            float(np.mean(actions)), float(np.var(actions)), energy, 1.0 / float(p @ p), 0.0
        )
    return distribution_moments(state.lattice.ns, state.probabilities, system, edge_width)


@dataclass
class ObservableSeries:
    """Column-oriented record of moments against step number."""

    regime_tag: Regime
    period: float = 1.0
    steps: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def append(self, step: int, m: Moments):
        if self.steps and step <= self.steps[-1]:
            raise AnalysisError(f"series steps must increase, got {step} after {self.steps[-1]}")
        self.steps.append(int(step))
        self.rows.append(m)

    def __len__(self):
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        if name == "step":
            return np.asarray(self.steps, dtype=int)
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("step") * self.period

    def table(self) -> np.ndarray:
        return np.column_stack([self.column(c) for c in COLUMNS]) if self.rows else np.empty((0, 6))


class SeriesRecorder:
    """Callable passed to the evolution loops; keeps every ``stride``-th state."""

    def __init__(self, regime, system=None, *, stride=1, edge_width=0, period=None):
        self.system = system
        self.stride = max(int(stride), 1)
        self.edge_width = edge_width
        if period is None:
            period = system.period if system is not None else 1.0
        self.series = ObservableSeries(Regime(regime), period)
        self._last = None

    def __call__(self, state):
        self._last = state
        if state.step % self.stride == 0:
            self.series.append(state.step, moments(state, self.system, self.edge_width))

    def finish(self) -> ObservableSeries:
        """Return the series, making sure the final state is included."""
        last = self._last
        if last is not None and (not self.series.steps or self.series.steps[-1] != last.step):
            self.series.append(last.step, moments(last, self.system, self.edge_width))
        return self.series


# --- fits ----------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionFit:
    B: float
    stderr: float
    n_points: int


def fit_diffusion(steps, variances, period=1.0, window=DEFAULT_FIT_WINDOW, min_points=20):
    """Least-squares B from Var(t) = 2 B t + c over ``window[0] <= step <= window[1]``."""
    steps = np.asarray(steps, dtype=float)
    variances = np.asarray(variances, dtype=float)
    lo, hi = window
    sel = (steps >= lo) & (steps <= hi)
    n = int(np.count_nonzero(sel))
    if n < max(min_points, 3):
        raise AnalysisError(
            f"diffusion fit needs >= {max(min_points, 3)} points in steps [{lo}, {hi}], got {n}"
        )
    res = stats.linregress(steps[sel] * period, variances[sel])
    return DiffusionFit(float(res.slope) / 2.0, float(res.stderr) / 2.0, n)


def classical_diffusion_estimate(series, period=1.0, window=DEFAULT_FIT_WINDOW, min_points=20):
    """B from a sequence of ``(step, Var(I))`` pairs."""
    arr = np.asarray(series, dtype=float).reshape(-1, 2)
    return fit_diffusion(arr[:, 0], arr[:, 1], period, window, min_points)


def diffusion_fit(series: ObservableSeries, window=DEFAULT_FIT_WINDOW, min_points=20):
    return fit_diffusion(
        series.column("step"), series.column("var_n"), series.period, window, min_points
    )


@dataclass(frozen=True)
class BreakTime:
    """Result of the two-segment knee fit.

    ``t_star`` is in units of the kick period (a step count) and is ``None``
    when no suppression was detected.
    """

    suppressed: bool
    t_star: Optional[float]
    ci: Optional[tuple]
    early_slope: float
    late_slope: float
    slope_ratio: float
    long_enough: bool


NO_SUPPRESSION_RATIO = 0.5


def _hinge_sse(x, y, knots):
    """SSE and slopes of the continuous hinge fit for every candidate knot."""
    sse = np.empty(len(knots))
    slopes = np.empty((len(knots), 2))
    ones = np.ones_like(x)
    for i, k in enumerate(knots):
        A = np.column_stack([ones, np.minimum(x, k), np.maximum(x - k, 0.0)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = y - A @ coef
        sse[i] = float(r @ r)
        slopes[i] = coef[1:]
    return sse, slopes


def break_time_estimate(series, min_segment=3) -> BreakTime:
    """Knee of var_n(step) from an exhaustive two-segment piecewise-linear scan.

    Accepts an :class:`ObservableSeries` or a ``(steps, var)`` pair.  The
    confidence interval collects knots whose SSE stays within 4 residual
    variances of the best fit.
    """
    if isinstance(series, ObservableSeries):
        x, y = series.column("step").astype(float), series.column("var_n")
    else:
        x, y = (np.asarray(v, dtype=float) for v in series)
    if len(x) < 2 * min_segment + 1:
        raise AnalysisError(f"break-time fit needs >= {2 * min_segment + 1} points, got {len(x)}")
    knots = x[min_segment - 1 : len(x) - min_segment]
    sse, slopes = _hinge_sse(x, y, knots)
    best = int(np.argmin(sse))
    early, late = slopes[best]
    ratio = late / early if early > 0 else math.inf
    if not ratio <= NO_SUPPRESSION_RATIO:
        return BreakTime(False, None, None, float(early), float(late), float(ratio), True)
    sigma2 = sse[best] / max(len(x) - 4, 1)
    accepted = knots[sse <= sse[best] + 4.0 * sigma2 * (1 + 1e-12) + 1e-300]
    t_star = float(knots[best])
    return BreakTime(
        True,
        t_star,
        (float(accepted.min()), float(accepted.max())),
        float(early),
        float(late),
        float(ratio),
        bool(4 * (t_star - x[0]) <= x[-1] - x[0]),
    )


@dataclass(frozen=True)
class LocalizationFit:
    ell: float
    stderr: float
    r_squared: float
    rms_residual: float
    n_sites: int


def localization_length_fit(ns, probs, center=0, floor=1e-14, min_sites=10) -> LocalizationFit:
    """Fit ln P_n = c - 2 |n - center| / ell over both tails.

    Sites with P_n <= ``floor`` and the centre site are ignored.  Each tail must
    keep at least ``min_sites`` sites.
    """
    ns = np.asarray(ns)
    probs = np.asarray(probs, dtype=float)
    dist = np.abs(ns - center)
    keep = (probs > floor) & (dist > 0)
    left = int(np.count_nonzero(keep & (ns < center)))
    right = int(np.count_nonzero(keep & (ns > center)))
    if min(left, right) < min_sites:
        raise AnalysisError(
            f"localization fit needs >= {min_sites} tail sites above {floor:g} per side, "
            f"got {left} left / {right} right"
        )
    res = stats.linregress(dist[keep].astype(float), np.log(probs[keep]))
    if res.slope >= 0:
        raise AnalysisError("tail profile does not decay; no localization length")
    ell = -2.0 / res.slope
    stderr = 2.0 * res.stderr / res.slope**2
    resid = np.log(probs[keep]) - (res.intercept + res.slope * dist[keep])
    return LocalizationFit(
        float(ell),
        float(stderr),
        float(res.rvalue**2),
        float(np.sqrt(np.mean(resid**2))),
        int(np.count_nonzero(keep)),
    )
