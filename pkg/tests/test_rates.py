"""Rate functions: values, exact cumulatives, inverses, config round trips."""

import numpy as np
import pytest
from scipy.integrate import quad

from istlab.errors import DomainError
from istlab.model.rates import (
    AsymptoticallyCritical,
    Constant,
    Periodic,
    PiecewiseConstant,
    Tabulated,
    cumulative_rate,
    rate_from_config,
)

ALL_RATES = [
    Constant(1.5),
    Periodic(2.0, psi_offset=0.3),
    AsymptoticallyCritical(0.7),
    PiecewiseConstant([0.0, 1.0, 2.5], [1.0, 0.5, 2.0]),
    Tabulated([0.0, 1.0, 3.0], [0.5, 1.5, 1.0]),
]


@pytest.mark.parametrize("b", ALL_RATES, ids=lambda b: b.kind)
def test_cumulative_matches_quadrature(b):
    for t0, t1 in [(0.0, 0.7), (0.3, 2.9), (1.0, 6.0)]:
        num, _ = quad(lambda s: float(b.value(s)), t0, t1, limit=200)
        assert b.cumulative(t0, t1) == pytest.approx(num, abs=1e-9)


@pytest.mark.parametrize("b", ALL_RATES, ids=lambda b: b.kind)
def test_cumulative_additive_and_ordered(b):
    a, m, c = 0.2, 1.4, 3.1
    total = float(b.cumulative(a, m)) + float(b.cumulative(m, c))
    assert total == pytest.approx(float(b.cumulative(a, c)), abs=1e-12)
    with pytest.raises(DomainError):
        b.cumulative(1.0, 0.5)


@pytest.mark.parametrize("b", ALL_RATES, ids=lambda b: b.kind)
def test_bound_dominates_values(b):
    t0, t1 = 0.1, 4.0
    s = np.linspace(t0, t1, 1001)
    assert float(b.bound_on(t0, t1)) >= float(np.max(b.value(s))) - 1e-12


@pytest.mark.parametrize("b", ALL_RATES, ids=lambda b: b.kind)
def test_inverses_recover_targets(b):
    t = np.array([0.0, 0.4, 1.7])
    target = np.array([0.3, 1.1, 0.05])
    u = np.asarray(b.invert_forward(t, target))
    assert np.allclose(b.cumulative(t, t + u), target, atol=1e-9)
    x = np.array([1.0, 2.0, 3.5])
    back_target = 0.5 * np.asarray(b.cumulative(0.0, x))
    v = np.asarray(b.invert_backward(x, back_target))
    assert np.all(v >= 0) and np.all(v <= x + 1e-12)
    assert np.allclose(b.cumulative(x - v, x), back_target, atol=1e-9)


@pytest.mark.parametrize("b", ALL_RATES, ids=lambda b: b.kind)
def test_config_round_trip(b):
    again = rate_from_config(b.to_config())
    s = np.linspace(0.0, 5.0, 401)
    assert np.allclose(again.value(s), b.value(s))
    assert float(again.cumulative(0.0, 4.3)) == pytest.approx(
        float(b.cumulative(0.0, 4.3)), abs=1e-14
    )


def test_constant_closed_forms():
    b = Constant(2.0)
    assert float(b.cumulative(1.0, 3.5)) == 5.0
    assert float(b.invert_forward(7.0, 3.0)) == 1.5
    assert float(b.invert_backward(4.0, 1.0)) == 0.5
    zero = Constant(0.0)
    assert float(zero.invert_forward(0.0, 0.5)) == np.inf
    with pytest.raises(DomainError):
        Constant(-1.0)


def test_asymptotically_critical_shape():
    b = AsymptoticallyCritical(2.0)
    assert float(b.value(0.0)) == 3.0
    assert float(b.value(1e9)) == pytest.approx(1.0, abs=1e-8)
    assert float(b.cumulative(0.0, 3.0)) == pytest.approx(3.0 + 2.0 * np.log(4.0))
    with pytest.raises(DomainError):
        AsymptoticallyCritical(-1.5)


def test_piecewise_constant_steps():
    b = PiecewiseConstant([0.0, 1.0, 2.0], [1.0, 0.0, 3.0])
    assert np.allclose(b.value([0.5, 1.5, 2.5, 10.0]), [1.0, 0.0, 3.0, 3.0])
    # right continuity at the breakpoints
    assert float(b.value(1.0)) == 0.0
    assert float(b.cumulative(0.0, 2.5)) == pytest.approx(1.0 + 0.0 + 1.5)
    # zero-rate plateau: mass resumes on the next piece
    assert float(b.invert_forward(0.5, 1.0)) == pytest.approx(2.0)
    ended = PiecewiseConstant([0.0, 1.0], [1.0, 0.0])
    assert float(ended.invert_forward(0.0, 2.0)) == np.inf
    with pytest.raises(DomainError):
        PiecewiseConstant([0.5, 1.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        PiecewiseConstant([0.0, 1.0], [1.0, -1.0])


def test_tabulated_interpolant():
    b = Tabulated([0.0, 1.0, 2.0], [0.0, 2.0, 2.0])
    assert float(b.value(0.5)) == 1.0
    assert float(b.value(5.0)) == 2.0  # constant beyond the last node
    # piecewise-quadratic antiderivative is exact for the interpolant
    assert float(b.cumulative(0.0, 1.0)) == pytest.approx(1.0)
    assert float(b.cumulative(0.0, 4.0)) == pytest.approx(1.0 + 2.0 + 4.0)
    with pytest.raises(DomainError):
        Tabulated([0.1, 1.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        Tabulated([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        Tabulated([0.0, 1.0], [1.0, -0.5])


def test_config_errors():
    with pytest.raises(DomainError):
        rate_from_config({"kind": "nope"})
    with pytest.raises(DomainError):
        rate_from_config({"beta": 1.0})


def test_cumulative_rate_helper():
    b = Constant(3.0)
    assert cumulative_rate(b, 0.0, 2.0) == pytest.approx(6.0)
