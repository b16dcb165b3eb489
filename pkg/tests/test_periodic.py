import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pulsedde import (BelowThreshold, ForcingSchedule, ModelParams, ValidationError,
                      a1_threshold, detect_locking, forced_cycle, iterate_pulse_map, limit_cycle,
                      solve)
from pulsedde.periodic import converged_index, forced_amplitude, lag_defect, lock_ratio

FIG7 = ModelParams(1.0, 0.4, 0.4)
BASE = ModelParams(1.0, 0.7, 1.4)


@st.composite
def above_threshold(draw):
    p = ModelParams(draw(st.floats(0.3, 2.0)), draw(st.floats(0.1, 2.0)), draw(st.floats(0.1, 2.0)))
    sigma = draw(st.floats(0.05, 1.0)) * p.tau
    alpha = draw(st.floats(0.05, 2.0))
    a = a1_threshold(p.beta_U, sigma, alpha) * draw(st.floats(1.0, 3.0))
    return p, sigma, alpha, a


def test_threshold_examples():
    assert a1_threshold(0.4, 0.6, 0.45) == pytest.approx(0.90384, abs=1e-4)
    assert a1_threshold(0.6288, 2.4, 2.4) == pytest.approx(7.5602, abs=1e-4)


def test_threshold_continuous_dosing_limit():
    assert a1_threshold(0.7, 0.6, 1e-12) == pytest.approx(0.7, rel=1e-9)


def test_threshold_validation():
    with pytest.raises(ValidationError):
        a1_threshold(0.4, 0.0, 1.0)
    with pytest.raises(ValidationError):
        a1_threshold(0.4, 0.6, -1.0)


def test_forced_cycle_at_threshold():
    fc = forced_cycle(FIG7, 0.6, 0.45, a1_threshold(0.4, 0.6, 0.45))
    assert fc.x_min_p == pytest.approx(0.0, abs=1e-15)
    assert fc.x_max_p == pytest.approx(0.4 * math.expm1(0.45), abs=1e-14)


def test_forced_cycle_band_example():
    fc = forced_cycle(ModelParams(1.0, 0.4, 1.4), 0.6, 0.510826, 1.48655)
    assert fc.x_min_p == pytest.approx(0.2, abs=1e-5)
    assert fc.x_max_p == pytest.approx(0.6, abs=1e-5)


def test_below_threshold_rejected():
    with pytest.raises(BelowThreshold):
        forced_cycle(FIG7, 0.6, 0.45, 0.9)
    forcing = ForcingSchedule.periodic(limit_cycle(FIG7).z2, 0.6, 0.45, 0.9)
    with pytest.raises(BelowThreshold):
        iterate_pulse_map(FIG7, forcing, 5, "closed")


@given(above_threshold())
def test_forced_cycle_invariants(case):
    p, sigma, alpha, a = case
    fc = forced_cycle(p, sigma, alpha, a)
    assert fc.x_min_p >= -1e-12 * a
    assert fc.x_max_p > fc.x_min_p
    assert fc.x_max_p + p.beta_U == pytest.approx((fc.x_min_p + p.beta_U) * math.exp(alpha), rel=1e-12)
    assert fc.x_max_p - fc.x_min_p == pytest.approx(forced_amplitude(sigma, alpha, a), rel=1e-12)


@given(above_threshold())
def test_pulse_map_matches_solver(case):
    p, sigma, alpha, a = case
    forcing = ForcingSchedule.periodic(limit_cycle(p).z2, sigma, alpha, a)
    closed = iterate_pulse_map(p, forcing, 30, "closed")
    sim = iterate_pulse_map(p, forcing, 30, "simulated")
    np.testing.assert_allclose(closed.at_onset, sim.at_onset, atol=1e-10)
    np.testing.assert_allclose(closed.at_offset, sim.at_offset, atol=1e-10)


def test_first_offset_value():
    p, sigma, alpha, a = FIG7, 0.6, 0.45, 0.95
    forcing = ForcingSchedule.periodic(limit_cycle(p).z2, sigma, alpha, a)
    pm = iterate_pulse_map(p, forcing, 0, "closed")
    assert pm.at_onset[0] == pytest.approx(0.0, abs=1e-15)
    assert pm.at_offset[0] == pytest.approx((a - p.beta_U) * -math.expm1(-sigma), abs=1e-15)


def test_threshold_train_starts_on_the_cycle():
    # at a = a1 the first onset value 0 is already the forced minimum
    a = a1_threshold(0.4, 0.6, 0.45)
    forcing = ForcingSchedule.periodic(limit_cycle(FIG7).z2, 0.6, 0.45, a)
    pm = iterate_pulse_map(FIG7, forcing, 20, "closed")
    fc = forced_cycle(FIG7, 0.6, 0.45, a)
    np.testing.assert_allclose(pm.at_onset, fc.x_min_p, atol=1e-15)
    np.testing.assert_allclose(pm.at_offset, fc.x_max_p, atol=1e-15)


def test_sequence_increases_to_the_cycle():
    a = 1.2
    forcing = ForcingSchedule.periodic(limit_cycle(FIG7).z2, 0.6, 0.45, a)
    pm = iterate_pulse_map(FIG7, forcing, 20, "closed")
    assert np.all(np.diff(pm.at_onset) > 0.0)
    assert np.all(np.diff(pm.at_offset) > 0.0)
    fc = forced_cycle(FIG7, 0.6, 0.45, a)
    long = iterate_pulse_map(FIG7, forcing, 200, "closed")
    assert long.at_onset[-1] == pytest.approx(fc.x_min_p, abs=1e-12)
    assert long.at_offset[-1] == pytest.approx(fc.x_max_p, abs=1e-12)


def test_contraction_rate():
    sigma, alpha, a = 0.6, 0.3, 1.5
    forcing = ForcingSchedule.periodic(limit_cycle(BASE).z2, sigma, alpha, a)
    pm = iterate_pulse_map(BASE, forcing, 12, "closed")
    fc = forced_cycle(BASE, sigma, alpha, a)
    gaps = np.abs(pm.at_onset - fc.x_min_p)
    np.testing.assert_allclose(gaps[1:], math.exp(-forcing.period) * gaps[:-1], rtol=1e-9)


@given(above_threshold(), st.floats(0.0, 1.0))
def test_any_start_reaches_the_forced_cycle(case, frac):
    p, sigma, alpha, a = case
    lc = limit_cycle(p)
    forcing = ForcingSchedule.periodic(frac * lc.period, sigma, alpha, a)
    n = int(math.ceil((40.0 + p.tau) / forcing.period)) + 3
    pm = iterate_pulse_map(p, forcing, n, "simulated")
    fc = forced_cycle(p, sigma, alpha, a)
    assert pm.at_onset[-1] == pytest.approx(fc.x_min_p, abs=1e-9)
    assert pm.at_offset[-1] == pytest.approx(fc.x_max_p, abs=1e-9)


def test_closed_map_needs_special_start():
    forcing = ForcingSchedule.periodic(0.3, 0.6, 0.45, 1.0)
    with pytest.raises(ValidationError):
        iterate_pulse_map(FIG7, forcing, 5, "closed")
    with pytest.raises(ValidationError):
        iterate_pulse_map(FIG7, forcing, 5, "fast")


def test_converged_index():
    assert converged_index([1.0, 0.5, 0.0, 0.0, 0.0], 0.0, count=3) == 2
    assert converged_index([1.0, 0.0, 1.0], 0.0, count=2) is None


@pytest.mark.parametrize("p, a, transient, record, q", [
    (BASE, 1.1, 450.0, 50.0, 5),
    (ModelParams(1.0, 1.3, 1.4), 0.9, 600.0, 100.0, 29),
])
def test_locking_examples(p, a, transient, record, q):
    forcing = ForcingSchedule.periodic(limit_cycle(p).z2, 0.6, 0.3, a)
    rep = lock_ratio(p, forcing, transient, record)
    assert rep.q == q
    assert rep.period == pytest.approx(q * 0.9, abs=1e-12)


@given(above_threshold(), st.floats(0.0, 1.0))
def test_above_threshold_locks_one_to_one(case, frac):
    p, sigma, alpha, a = case
    forcing = ForcingSchedule.periodic(frac * limit_cycle(p).period, sigma, alpha, a)
    transient = forcing.delta0 + 40.0 + p.tau
    rep = lock_ratio(p, forcing, transient, 4.0 * (p.tau + forcing.period))
    assert rep.q == 1


def test_unforced_cycle_has_no_short_lock():
    p = BASE
    traj = solve(p, None, None, 60.0)
    assert detect_locking(traj, 0.9, 10.0, max_q=3) is None


def test_lag_defect_is_exact_for_the_free_cycle():
    lc = limit_cycle(BASE)
    traj = solve(BASE, None, None, 10 * lc.period)
    assert lag_defect(traj, lc.period, 1.0, 5 * lc.period) < 1e-13
    assert lag_defect(traj, lc.period / 2, 1.0, 5 * lc.period) > 0.1


@pytest.mark.parametrize("kwargs", [dict(max_q=0), dict(tol=-1.0), dict(T_p=0.0)])
def test_detect_locking_validation(kwargs):
    traj = solve(BASE, None, None, 20.0)
    args = dict(T_p=0.9)
    args.update(kwargs)
    with pytest.raises(ValidationError):
        detect_locking(traj, **args)
