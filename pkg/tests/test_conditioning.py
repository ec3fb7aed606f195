"""Harmonic transforms: parameter builds, kernel law, simulation reports."""

import numpy as np
import pytest
from scipy import stats

from istlab.conditioning import (
    EVENTS,
    EXT,
    EXTC,
    HEIGHT_GT,
    HEIGHT_LE,
    condition_params,
    sample_conditioned_kernel,
    simulate_conditioned,
)
from istlab.errors import DomainError, RegimeError
from istlab.model.kernels import Exponential
from istlab.model.rates import Constant
from istlab.scale import solve_scale

B = Constant(2.0)
K = Exponential(Constant(1.0))


@pytest.fixture(scope="module")
def table8():
    return solve_scale(B, K, 8.0, tol=1e-10)


@pytest.fixture(scope="module")
def table5():
    return solve_scale(B, K, 5.0, tol=1e-10)


def test_ext_transform_recovers_dual_markov_pair(table8):
    # conditioning the supercritical (2, 1) pair on extinction swaps the
    # rates: the conditioned pair is the subcritical (1, 2) one
    params = condition_params(B, K, table8, EXT)
    assert params.event == EXT and not params.is_identity
    assert params.x_min == 0.0
    assert np.max(np.abs(params.bprime_values - 1.0)) < 2e-3
    kern = params.kernel()
    assert kern.moment(0.7, 1) == pytest.approx(0.5, abs=1e-3)
    x = sample_conditioned_kernel(params, 0.7, seed=707, size=4000)
    _, p = stats.kstest(x, lambda w: 1.0 - np.exp(-2.0 * w))
    assert p > 0.01
    one = sample_conditioned_kernel(params, 0.7, seed=3)
    assert isinstance(one, float) and one > 0.0


def test_extc_rate_closed_form(table8):
    # survival conditioning of the same pair: b'(x) = (2 - e^{-x})/(1 - e^{-x}),
    # falling to 2 as x grows
    params = condition_params(B, K, table8, EXTC)
    assert params.x_min > 0.0
    xs = np.array([0.5, 1.0, 2.0, 3.0])
    want = (2.0 - np.exp(-xs)) / (1.0 - np.exp(-xs))
    got = np.interp(xs, params.grid, params.bprime_values)
    assert np.allclose(got, want, rtol=1e-2)
    rate = params.rate()
    assert rate.grid[0] == 0.0  # floored grid extended down to 0
    assert float(rate.value(0.0)) == float(rate.value(params.x_min))
    assert float(rate.value(50.0)) == pytest.approx(2.0, abs=0.05)


def test_normalization_near_one(table8):
    for event in EVENTS:
        params = condition_params(B, K, table8, event)
        xs = params.grid[[len(params.grid) // 4, len(params.grid) // 2]]
        norm = params.normalization(xs, segments=2**13)
        assert np.max(np.abs(norm - 1.0)) < 1e-6, event


def test_height_le_harmonic_vanishes_beyond_grid(table8):
    params = condition_params(B, K, table8, HEIGHT_LE)
    assert float(params.h(np.array([9.5]))[0]) == 0.0
    gt = condition_params(B, K, table8, HEIGHT_GT)
    assert float(gt.h(np.array([9.5]))[0]) == 1.0


def test_condition_params_validation(table8):
    with pytest.raises(DomainError):
        condition_params(B, K, table8, "sometimes")
    # a birthless rate makes S identically 1: height exceedance is
    # impossible, survival conditioning is degenerate, and conditioning on
    # a certain event is the identity transform
    b0 = Constant(0.0)
    flat = solve_scale(b0, K, 4.0, tol=1e-10)
    with pytest.raises(RegimeError):
        condition_params(b0, K, flat, HEIGHT_GT)
    with pytest.raises(RegimeError):
        condition_params(b0, K, flat, EXTC)
    ident = condition_params(b0, K, flat, HEIGHT_LE)
    assert ident.is_identity
    assert ident.rate() is b0
    assert ident.kernel() is K


def test_simulate_conditioned_ext_report(table8):
    params = condition_params(B, K, table8, EXT)
    rep = simulate_conditioned(params, 0.7, 8.0, 40.0, 800, seed=313)
    assert rep["event"] == EXT and not rep["floored"]
    assert rep["absorbed_freq"] == 1.0
    for block in rep["ks_vs_filtered_base"].values():
        assert block["pvalue"] > 0.01
    assert 0.0 < rep["filter_fraction"] < 1.0
    assert rep["conditioned_means"]["height"] > 0.0


def test_simulate_conditioned_height_le(table5):
    params = condition_params(B, K, table5, HEIGHT_LE)
    rep = simulate_conditioned(params, 0.7, 5.0, 25.0, 600, seed=313)
    assert rep["height_violations"] == 0
    assert rep["tree_height_violations"] == 0
    for block in rep["ks_vs_filtered_base"].values():
        assert block["pvalue"] > 0.01


def test_simulate_conditioned_extc_paths_only(table5):
    params = condition_params(B, K, table5, EXTC)
    rep = simulate_conditioned(params, 0.7, 5.0, 25.0, 400, seed=313)
    # complement events do not leave the tree a branching process, so only
    # path statistics are reported
    assert rep["ks_vs_filtered_base"] == {}
    assert rep["floor_reentries"] >= rep["absorbed_violations"]
    assert rep["absorbed_freq"] < 0.05
    assert rep["final_value_mean"] > 0.7  # transient upward drift


def test_extc_transience_trend(table5):
    from istlab.contour import simulate_pdmp_batch

    params = condition_params(B, K, table5, EXTC)
    bp, kp = params.rate(), params.kernel()
    fracs = []
    for horizon in (4.0, 16.0):
        run = simulate_pdmp_batch(bp, kp, 0.7, 1500, seed=555, horizon=horizon)
        alive = run["exit_kind"] == 0
        fracs.append(float(np.mean(run["final_value"][alive] < 0.5)))
    assert fracs[1] <= fracs[0]
    assert fracs[1] < 0.01
