"""Tests for the rescaled contour runs and their Bessel comparison."""

import numpy as np
import pytest
from scipy import stats
from scipy.special import erf, gammaincc

from istlab.contour import simulate_pdmp_batch
from istlab.errors import DomainError
from istlab.model import AsymptoticallyCritical, Constant, Dirac, Exponential
from istlab.scaling import (
    RescaledKernel,
    RescaledRate,
    bessel_marginal,
    check_assumption_61,
    compare_scaling_limit,
    simulate_rescaled,
)


def test_rescaled_rate_identity_at_n_one():
    base = AsymptoticallyCritical(0.7)
    r = RescaledRate(base, 1)
    ts = np.array([0.0, 0.3, 2.0, 11.0])
    assert np.array_equal(r.value(ts), base.value(ts))
    assert r.cumulative(0.5, 3.0) == base.cumulative(0.5, 3.0)
    assert r.bound_on(0.5, 3.0) == base.bound_on(0.5, 3.0)
    assert r.invert_forward(1.0, 2.0) == base.invert_forward(1.0, 2.0)


def test_rescaled_rate_delegation():
    from istlab.model import PiecewiseConstant

    base = PiecewiseConstant([0.0, 1.0], [1.0, 2.0])
    r = RescaledRate(base, 4)
    assert r.root == 2.0
    # value(t) = sqrt(n) b(sqrt(n) t)
    assert float(r.value(0.3)) == 2.0 * 1.0
    assert float(r.value(0.6)) == 2.0 * 2.0
    # cumulative reduces to the base integral between stretched endpoints
    assert float(r.cumulative(0.0, 1.0)) == pytest.approx(3.0, abs=1e-12)
    # invert: base reaches mass 2.5 at time 1.75, so rescaled time is 0.875
    assert float(r.invert_forward(0.0, 2.5)) == pytest.approx(0.875, abs=1e-12)
    assert float(r.bound_on(0.0, 1.0)) == 2.0 * 2.0
    cfg = r.to_config()
    assert cfg["kind"] == "rescaled" and cfg["n"] == 4
    assert cfg["base"]["kind"] == "piecewise_constant"
    with pytest.raises(DomainError):
        RescaledRate(base, 0)


def test_rescaled_kernel_dirac():
    rk = RescaledKernel(Dirac(1.0), 4)
    rng = np.random.default_rng(0)
    assert float(rk.sample(0.7, rng)) == 0.5
    assert np.all(rk.sample(0.7, rng, size=5) == 0.5)
    assert rk.atoms(0.7) == [(0.5, 1.0)]
    assert rk.moment(0.7, 1) == 0.5
    assert rk.moment(0.7, 2) == 0.25
    assert float(rk.cdf(0.7, 0.49)) == 0.0
    assert float(rk.cdf(0.7, 0.5)) == 1.0
    # seg_mass stays half-open after rescaling
    assert float(rk.seg_mass(0.7, 0.25, 0.5)) == 0.0
    assert float(rk.seg_mass(0.7, 0.5, 0.75)) == 1.0
    assert float(rk.seg_first(0.7, 0.4, 0.6)) == 0.5
    assert rk.expect(0.7, lambda y: y**2) == pytest.approx(0.25, abs=1e-12)
    assert rk.time_invariant and not rk.heavy_tailed
    with pytest.raises(DomainError):
        RescaledKernel(Dirac(1.0), 0)


def test_rescaled_kernel_exponential_law():
    # exponential(2) scaled by 1/3 is exponential(6)
    rk = RescaledKernel(Exponential(Constant(2.0)), 9)
    rng = np.random.default_rng(7)
    draws = rk.sample(1.3, rng, size=20000)
    assert stats.kstest(draws, "expon", args=(0.0, 1.0 / 6.0)).pvalue > 0.01
    assert rk.moment(1.3, 1) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_bessel_marginal_validation_and_t_zero():
    assert np.array_equal(bessel_marginal(0.5, 1.2, 0.0, 4, seed=1), np.full(4, 1.2))
    with pytest.raises(DomainError):
        bessel_marginal(0.5, 0.0, 1.0, 4, seed=1)
    with pytest.raises(DomainError):
        bessel_marginal(0.5, 1.0, -0.5, 4, seed=1)


@pytest.mark.parametrize("c", [0.5, 0.75])
def test_bessel_marginal_high_dimension(c):
    # dimension 2c+1 >= 2: never absorbed, and E[X_t^2] = x0^2 + delta*t
    x0, t, n = 1.0, 0.5, 40000
    x = bessel_marginal(c, x0, t, n, seed=11)
    assert np.all(x > 0.0)
    delta = 2.0 * c + 1.0
    z = x**2
    mean_target = x0**2 + delta * t
    sd = np.sqrt((2.0 * delta * t**2 + 4.0 * x0**2 * t) / n)
    assert abs(np.mean(z) - mean_target) < 4.0 * sd


def test_bessel_marginal_dimension_one_is_reflected_killed_bm():
    # dimension 1 (c = 0) is |x0 + W| absorbed at 0: absorbed mass is
    # 1 - erf(x0 / sqrt(2t)) and the alive part has the reflection density
    x0, t, n = 0.8, 1.0, 40000
    x = bessel_marginal(0.0, x0, t, n, seed=3)
    p_abs = 1.0 - erf(x0 / np.sqrt(2.0 * t))
    freq = np.mean(x == 0.0)
    sd = np.sqrt(p_abs * (1.0 - p_abs) / n)
    assert abs(freq - p_abs) < 4.0 * sd
    rt = np.sqrt(t)

    def alive_cdf(y):
        y = np.asarray(y, dtype=float)
        num = (
            stats.norm.cdf((y - x0) / rt)
            - stats.norm.cdf(-x0 / rt)
            - stats.norm.cdf((y + x0) / rt)
            + stats.norm.cdf(x0 / rt)
        )
        return num / (1.0 - p_abs)

    assert stats.kstest(x[x > 0.0], alive_cdf).pvalue > 0.01


def test_bessel_marginal_low_dimension_absorption():
    # dimension 0.5: absorbed mass is the regularized upper gamma
    # Q(1 - delta/2, x0^2 / (2t))
    x0, t, n = 1.0, 1.0, 40000
    x = bessel_marginal(-0.25, x0, t, n, seed=5)
    p_abs = float(gammaincc(0.75, x0**2 / (2.0 * t)))
    freq = np.mean(x == 0.0)
    sd = np.sqrt(p_abs * (1.0 - p_abs) / n)
    assert abs(freq - p_abs) < 4.0 * sd
    assert np.all(x[x > 0.0] > 0.0) and np.all(np.isfinite(x))


def test_bessel_marginal_dimension_zero_euler_survival():
    # dimension 0 runs the Euler branch; exact survival is 1 - exp(-x0^2/2t)
    x0, t, n = 1.0, 0.8, 20000
    x = bessel_marginal(-0.5, x0, t, n, seed=9)
    survival = float(np.mean(x > 0.0))
    exact = 1.0 - np.exp(-(x0**2) / (2.0 * t))
    assert abs(survival - exact) < 0.015


def test_check_assumption_61_passes_on_critical_pair():
    diag = check_assumption_61(AsymptoticallyCritical(0.7), Dirac(1.0))
    assert diag.passed
    assert diag.c_converged and diag.m2_ok and diag.m3_bounded
    assert diag.c_estimate == pytest.approx(0.7, abs=0.02)
    assert diag.m2_estimate == pytest.approx(1.0, abs=0.02)
    assert diag.notes == ()
    payload = diag.to_json()
    assert '"passed": true' in payload


def test_check_assumption_61_flags_noncritical_pair():
    diag = check_assumption_61(Constant(1.0), Exponential(Constant(2.0)))
    assert not diag.passed
    # drift x(b m - 1) = -x/2 diverges and b m2 = 1/2 misses 1
    assert not diag.c_converged
    assert not diag.m2_ok
    assert diag.m3_bounded
    assert len(diag.notes) == 2


def test_simulate_rescaled_n_one_matches_engine():
    b, K = Constant(1.0), Exponential(Constant(1.0))
    run = simulate_rescaled(1, b, K, 1.0, horizon=1.0, N=200, seed=42,
                            record_times=(0.5, 1.0))
    raw = simulate_pdmp_batch(b, K, 1.0, 200, 42, horizon=1.0,
                              record_times=(0.5, 1.0))
    assert np.array_equal(run.values, raw["values"], equal_nan=True)
    assert np.array_equal(run.exit_kind, raw["exit_kind"])
    assert np.array_equal(run.exit_time, raw["exit_time"])
    assert run.time_dilation == 1.0


def test_simulate_rescaled_structure():
    b, K = Constant(2.0), Exponential(Constant(2.0))
    run = simulate_rescaled(4, b, K, 1.0, horizon=0.5, N=300, seed=6,
                            record_times=(0.25, 0.5), record_paths=True)
    assert run.marginal(0.25).shape == (300,)
    assert run.marginal(0.5).shape == (300,)
    with pytest.raises(DomainError):
        run.marginal(0.3)
    assert run.absorbed_frequency == pytest.approx(np.mean(run.exit_kind == 1))
    assert run.time_dilation == 2.0
    assert run.paths is not None and len(run.paths) == 300
    meta = run.meta()
    assert meta["n"] == 4 and meta["paths"] == 300
    with pytest.raises(DomainError):
        simulate_rescaled(4, b, K, 0.0, horizon=0.5, N=10, seed=6)
    with pytest.raises(DomainError):
        simulate_rescaled(0, b, K, 1.0, horizon=0.5, N=10, seed=6)


def test_compare_scaling_limit_light():
    # (2, exponential(2)) is exactly critical with unit variance product,
    # so the limit is the dimension 1 Bessel
    base = (Constant(2.0), Exponential(Constant(2.0)))
    report = compare_scaling_limit([4, 16], base, 0.0, x0=1.0, t=0.5,
                                   N=2000, seed=17)
    assert report["dimension"] == 1.0
    assert len(report["entries"]) == 2
    for entry in report["entries"]:
        assert set(entry) >= {"n", "ks_distance", "ks_pvalue", "ks_critical",
                              "survivors", "absorbed"}
        assert entry["ks_distance"] < 0.2
        assert abs(entry["absorbed"][0] - entry["absorbed"][1]) < 0.1
        assert all(s <= 2000 for s in entry["survivors"])
    assert "distances_decreasing" in report
