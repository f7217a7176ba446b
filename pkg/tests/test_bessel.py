import math

import numpy as np
import pytest
from oracles import bessel_series

from kicksim import DomainError, KickConvention, build_kick_kernel, stochastic_row, unitary_row
from kicksim.bessel import trial_half_width

SUM_RULE_KS = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0]


def test_zero_kick_is_identity():
    k = build_kick_kernel(0.0)
    assert k.half_width == 0
    assert list(k.values) == [1.0]
    for conv in KickConvention:
        assert list(unitary_row(k, conv)) == [1.0]
    assert list(stochastic_row(k)) == [1.0]


def test_values_at_two_match_series():
    k = build_kick_kernel(2.0)
    M = k.half_width
    # frozen from the extended-precision power series
    assert k.values[M] == pytest.approx(0.2238907791, abs=1e-10)
    assert k.values[M + 1] == pytest.approx(0.5767248078, abs=1e-10)
    assert k.values[M] == pytest.approx(bessel_series(0, 2.0), rel=1e-14)


@pytest.mark.parametrize("K", [0.5, 1.0, 2.0, 3.7, 5.0, 10.0, 20.0, 30.0])
def test_recurrence_matches_series_oracle(K):
    k = build_kick_kernel(K)
    for m, v in zip(k.orders, k.values):
        ref = bessel_series(int(m), K)
        if abs(ref) > 1e-300:
            assert abs(v - ref) <= 1e-12 * abs(ref), (m, v, ref)


@pytest.mark.parametrize("K", SUM_RULE_KS)
def test_sum_rules(K):
    k = build_kick_kernel(K)
    p = stochastic_row(k)
    m = k.orders
    assert abs(math.fsum(p) - 1.0) <= k.tail_bound
    assert abs(math.fsum(m * m * p) - K * K / 2) <= 1e-10
    assert abs(math.fsum(m * m * p) - K * K / 2) <= k.moment_tol


def test_second_moment_at_five():
    k = build_kick_kernel(5.0)
    assert math.fsum(k.orders**2 * stochastic_row(k)) == pytest.approx(12.5, abs=1e-10)


@pytest.mark.parametrize("K", [0.5, 2.0, 5.0, 13.0, 30.0])
def test_parity_exact(K):
    k = build_kick_kernel(K)
    M = k.half_width
    for m in range(1, M + 1):
        assert k.values[M - m] == (-1) ** m * k.values[M + m]


@pytest.mark.parametrize("K", [0.5, 2.0, 5.0, 10.0, 20.0])
def test_orthogonality(K):
    k = build_kick_kernel(K)
    v = k.values
    for d in range(k.half_width + 1):
        s = math.fsum(v[: len(v) - d] * v[d:])
        assert abs(s - (d == 0)) <= 10 * k.tail_bound, d


@pytest.mark.parametrize("tol", [1e-8, 1e-10, 1e-12, 1e-14])
def test_tail_bound_respects_tolerance(tol):
    k = build_kick_kernel(7.5, tol)
    assert k.tail_bound <= tol
    # the outermost pair alone already costs 2 sqrt(2 J_M^2) when dropped
    assert 2 * math.sqrt(2 * k.values[-1] ** 2) > 0.1 * tol


def test_half_width_grows_as_tolerance_tightens():
    widths = [build_kick_kernel(7.5, tol).half_width for tol in (1e-8, 1e-10, 1e-12, 1e-14)]
    assert widths == sorted(widths) and widths[0] < widths[-1]


def test_trial_width_is_not_smaller_than_needed_for_defaults():
    for K in SUM_RULE_KS:
        assert build_kick_kernel(K).half_width <= 2 * trial_half_width(K)


def test_physical_kick_sign():
    k = build_kick_kernel(2.0)
    row = unitary_row(k, KickConvention.PHYSICAL_KICK)
    M = k.half_width
    assert row[M + 2] == pytest.approx(-0.3528340286, abs=1e-10)
    assert row[M + 1] == pytest.approx(-1j * 0.5767248078, abs=1e-10)


@pytest.mark.parametrize("conv", list(KickConvention))
def test_unitary_rows_are_normalized(conv):
    k = build_kick_kernel(5.0)
    row = unitary_row(k, conv)
    assert abs(math.fsum(np.abs(row) ** 2) - 1.0) <= 1e-12


def test_stochastic_row_properties():
    k = build_kick_kernel(6.3)
    p = stochastic_row(k)
    assert np.all(p >= 0)
    assert np.array_equal(p, p[::-1])
    assert np.array_equal(p, np.abs(unitary_row(k)) ** 2)


@pytest.mark.parametrize("args", [(-1.0, 1e-14), (2.0, 0.0), (2.0, 1e-6), (float("nan"), 1e-14)])
def test_invalid_arguments(args):
    with pytest.raises(DomainError):
        build_kick_kernel(*args)


def test_kernel_is_immutable():
    k = build_kick_kernel(3.0)
    with pytest.raises(ValueError):
        k.values[0] = 1.0
