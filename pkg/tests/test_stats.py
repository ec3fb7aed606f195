"""Tests for the shared statistics helpers."""

import numpy as np
import pytest

from istlab.errors import DomainError
from istlab.stats import (
    chi_square_gof,
    empirical_survival,
    fit_exponential_tail,
    ks_critical_value,
    ks_two_sample,
    wilson_interval,
)


def test_wilson_interval_reference_values():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-3)
    assert hi == pytest.approx(0.5962, abs=1e-3)
    # degenerate counts stay inside [0, 1] and the interval keeps width
    lo0, hi0 = wilson_interval(0, 40)
    assert lo0 == 0.0 and 0.0 < hi0 < 0.2
    lo1, hi1 = wilson_interval(40, 40)
    assert 0.8 < lo1 < 1.0 and hi1 == 1.0
    with pytest.raises(DomainError):
        wilson_interval(0, 0)


def test_wilson_interval_wider_at_higher_z():
    lo95, hi95 = wilson_interval(30, 90)
    lo99, hi99 = wilson_interval(30, 90, z=2.5758293035489004)
    assert lo99 < lo95 < hi95 < hi99


def test_ks_critical_value():
    # c(0.01) = sqrt(-ln(0.005)/2) = 1.6276 and sqrt(2/n) at n = m = 1e4
    assert ks_critical_value(10000, 10000, 0.01) == pytest.approx(0.023018, abs=1e-5)
    assert ks_critical_value(100, 400, 0.05) == pytest.approx(
        np.sqrt(-0.5 * np.log(0.025)) * np.sqrt(500 / 40000.0), rel=1e-12
    )
    with pytest.raises(DomainError):
        ks_critical_value(100, 100, 0.0)
    with pytest.raises(DomainError):
        ks_critical_value(100, 100, 1.0)


def test_ks_two_sample_identical_and_disjoint():
    a = np.arange(1.0, 101.0)
    dist, pvalue = ks_two_sample(a, a)
    assert dist == pytest.approx(0.0, abs=1e-12)
    assert pvalue == pytest.approx(1.0)
    dist, pvalue = ks_two_sample(a, a + 1000.0)
    assert dist == 1.0 and pvalue < 1e-10


def test_chi_square_gof_exact_match():
    obs = np.array([10, 20, 30, 40])
    stat, pvalue, dof = chi_square_gof(obs, obs.astype(float))
    assert stat == 0.0
    assert pvalue == pytest.approx(1.0)
    assert dof == 3


def test_chi_square_gof_merges_small_tail_bins():
    observed = [48, 32, 12, 5, 2, 1]
    expected = [50.0, 30.0, 12.0, 4.0, 3.0, 1.0]
    stat, pvalue, dof = chi_square_gof(observed, expected)
    # trailing bins fold right to left until each expectation reaches 5:
    # (4, 3, 1) and then the 12 absorb into [50, 30, 12, 8]
    o = np.array([48.0, 32.0, 12.0, 8.0])
    e = np.array([50.0, 30.0, 12.0, 8.0])
    assert dof == 3
    assert stat == pytest.approx(float(np.sum((o - e) ** 2 / e)), rel=1e-12)
    assert 0.0 < pvalue < 1.0


def test_chi_square_gof_validation():
    with pytest.raises(DomainError):
        chi_square_gof([1, 2, 3], [1.0, 2.0])
    # everything merges into one bin: no test possible
    with pytest.raises(DomainError):
        chi_square_gof([2, 1], [2.0, 1.0])


def test_empirical_survival_hand_case():
    out = empirical_survival([1.0, 2.0, 3.0], [0.5, 2.0, 3.5])
    assert np.allclose(out, [1.0, 2.0 / 3.0, 0.0])
    # threshold at a sample point counts the point itself (>= convention)
    assert float(empirical_survival([1.0, 2.0, 3.0], [3.0])[0]) == pytest.approx(1.0 / 3.0)


def test_fit_exponential_tail_recovers_line():
    t = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    s = 0.8 * np.exp(-0.6 * t)
    lam, logc = fit_exponential_tail(t, s)
    assert lam == pytest.approx(0.6, abs=1e-12)
    assert logc == pytest.approx(np.log(0.8), abs=1e-12)
    # saturated estimates (0 or 1) are dropped before fitting
    t2 = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 10.0])
    s2 = np.array([1.0, 0.8 * np.exp(-0.6), 0.8 * np.exp(-1.2), 0.8 * np.exp(-1.8),
                   0.8 * np.exp(-2.4), 0.0])
    lam2, _ = fit_exponential_tail(t2, s2)
    assert lam2 == pytest.approx(0.6, abs=1e-12)
    with pytest.raises(DomainError):
        fit_exponential_tail([1.0, 2.0, 3.0], [1.0, 0.5, 0.0])
