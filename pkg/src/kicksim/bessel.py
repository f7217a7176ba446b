"""Truncated rows of integer-order Bessel functions J_m(K) and the kick kernels built on them.

Values come from Miller's downward recurrence

    J_{k-1}(x) = (2k / x) J_k(x) - J_{k+1}(x)

started well above the wanted orders and normalized with
J_0 + 2 sum_{k>=1} J_{2k} = 1.  Upward recurrence loses accuracy once m > x,
which is exactly the tail the kernel needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kicksim.errors import DomainError, ResourceError
from kicksim.model import KickConvention

DEFAULT_TAIL_TOL = 1e-14
MAX_HALF_WIDTH = 1_000_000
_EPS = np.finfo(float).eps
_RESCALE = 1e250


def trial_half_width(K: float) -> int:
    """Starting half-width M0 ~ K + 12 + 8 K**(1/3)."""
    return int(math.ceil(K + 12.0 + 8.0 * K ** (1.0 / 3.0)))


def _miller(K: float, top: int) -> np.ndarray:
    """J_0..J_top(K) by downward recurrence from order ``top + extra``."""
    start = top + 20 + int(math.sqrt(40.0 * max(top, 1)))
    start += start % 2
    vals = np.zeros(start + 2)
    vals[start] = 1e-300
    two_over_x = 2.0 / K
    for k in range(start, 0, -1):
        vals[k - 1] = k * two_over_x * vals[k] - vals[k + 1]
        if abs(vals[k - 1]) > _RESCALE:
            vals[k - 1 :] /= _RESCALE
    norm = vals[0] + 2.0 * math.fsum(vals[2::2])
    return vals[: top + 1] / norm


def bessel_row(K: float, top: int) -> np.ndarray:
    """J_m(K) for m = 0..top."""
    if K < 0:
        raise DomainError(f"K must be >= 0, got {K}")
    if K == 0:
        out = np.zeros(top + 1)
        out[0] = 1.0
        return out
    return _miller(float(K), max(top, int(K) + 1))[: top + 1]


@dataclass(frozen=True)
class KickKernel:
    """Truncated row J_m(K), m = -M..M.

    Attributes:
        K: kick strength.
        half_width: M.
        values: J_m(K) for m = -M..M (index ``m + M``).
        tail_bound: 2 sqrt(sum_{|m|>M} J_m**2) plus a rounding allowance.  By
            Cauchy-Schwarz this bounds the discarded weight, |sum J_m**2 - 1| and the
            orthogonality defect |sum_m J_m J_{m+d}| of the truncated row alike, so a
            small tail_bound means the truncated kick is unitary to that accuracy.
        moment_tol: matching bound for |sum m**2 J_m**2 - K**2/2|.
    """

    K: float
    half_width: int
    values: np.ndarray
    tail_bound: float
    moment_tol: float

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    def __len__(self):
        return 2 * self.half_width + 1


def _tail_sums(pos: np.ndarray, K: float):
    """Per-M tail majorants for the squared row and its second moment.

    ``pos`` holds J_0..J_N.  Returns arrays indexed by M (0..N-1) of
    2 sum_{m>M} J_m^2 and 2 sum_{m>M} m^2 J_m^2, where the part beyond N is a
    geometric majorant from the last two values, inflated tenfold.
    """
    N = len(pos) - 1
    sq = pos**2
    m = np.arange(N + 1, dtype=float)
    # beyond N the ratio |J_{m+1}/J_m| only shrinks
    r = abs(pos[N] / pos[N - 1]) if pos[N - 1] != 0 else 0.0
    r = min(r, K / (2.0 * (N + 1)))
    r2 = r * r
    beyond = 10.0 * sq[N] * r2 / (1.0 - r2)
    beyond_m2 = 10.0 * sq[N] * r2 * ((N + 1) ** 2) / (1.0 - r2) ** 3
    # suffix sums over m > M, computed from the small end for accuracy
    suffix = np.concatenate([np.cumsum(sq[::-1])[::-1][1:], [0.0]]) + beyond
    suffix_m2 = np.concatenate([np.cumsum((m**2 * sq)[::-1])[::-1][1:], [0.0]]) + beyond_m2
    return 2.0 * suffix, 2.0 * suffix_m2


def build_kick_kernel(K: float, tail_tol: float = DEFAULT_TAIL_TOL) -> KickKernel:
    """Smallest symmetric Bessel row whose discarded weight is below ``tail_tol``.

    Raises:
        DomainError: ``K < 0`` or ``tail_tol`` outside (0, 1e-8].
        ResourceError: the required half-width exceeds :data:`MAX_HALF_WIDTH`.
    """
    K = float(K)
    if not (math.isfinite(K) and K >= 0):
        raise DomainError(f"K must be a finite number >= 0, got {K}")
    if not 0 < tail_tol <= 1e-8:
        raise DomainError(f"tail_tol must lie in (0, 1e-8], got {tail_tol}")
    if K == 0:
        return KickKernel(0.0, 0, np.ones(1), 0.0, 0.0)

    top = trial_half_width(K)
    while True:
        if top > MAX_HALF_WIDTH:
            raise ResourceError(
                f"tail_tol={tail_tol:g} at K={K:g} needs half-width above {MAX_HALF_WIDTH}"
            )
        pos = bessel_row(K, top)
        tails, tails_m2 = _tail_sums(pos, K)
        rounding = 16.0 * _EPS
        bounds = 2.0 * np.sqrt(tails[:top]) + rounding
        ok = np.flatnonzero(bounds <= tail_tol)
        # tails are monotone, so the first acceptable M is the smallest
        if ok.size:
            M = int(ok[0])
            break
        top *= 2

    mags = pos[: M + 1]
    neg = mags[1:][::-1] * np.where(np.arange(M, 0, -1) % 2 == 1, -1.0, 1.0)
    values = np.concatenate([neg, mags])
    values.setflags(write=False)
    moment_tol = float(tails_m2[M] + 16.0 * _EPS * (K * K / 2.0 + 1.0) * (2 * M + 1))
    return KickKernel(K, M, values, float(bounds[M]), moment_tol)


def unitary_row(kernel: KickKernel, convention=KickConvention.PAPER_LITERAL) -> np.ndarray:
    """Kernel entries U_m, m = -M..M, for the amplitude map."""
    convention = KickConvention(convention)
    row = kernel.values.astype(complex)
    if convention is KickConvention.PHYSICAL_KICK:
        row = row * (-1j) ** (kernel.orders % 4)
    return row


def stochastic_row(kernel: KickKernel) -> np.ndarray:
    """Transition probabilities p_m = J_m(K)**2, m = -M..M."""
    return kernel.values**2
