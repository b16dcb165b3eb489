import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import brentq

from pulsedde import (CaseLabel, ForcingSchedule, InfiniteResetting, ModelParams, OutOfRange,
                      Undefined, ValidationError, case_intervals, classify, delta_constants,
                      limit_cycle, pulse_response, response_curve, solve, unstable_cycle)
from pulsedde.single_pulse import FNFP_FAMILY, rapid_cycle_width

UNIT = ModelParams(1.0, 1.0, 1.0)
RAPID = ModelParams(1.0, 0.4, 0.4)
FIG_FNFP = ModelParams(1.0, 0.3, 0.4)


def random_setting(rng):
    p = ModelParams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.3, 2.0)),
                    float(rng.uniform(0.3, 2.0)))
    return p, float(rng.uniform(0.1, 1.0)) * p.tau, float(rng.uniform(0.05, 2.0))


@st.composite
def settings(draw):
    p = ModelParams(draw(st.floats(0.5, 2.0)), draw(st.floats(0.3, 2.0)), draw(st.floats(0.3, 2.0)))
    return p, draw(st.floats(0.1, 1.0)) * p.tau, draw(st.floats(0.05, 2.0))


def test_delta2_unit_cycle():
    assert delta_constants(UNIT, 1.0, 0.5).delta2 == pytest.approx(1.35965, abs=1e-5)


def test_delta_inf_rapid_example():
    assert delta_constants(RAPID, 0.39235, 0.8).delta_inf == pytest.approx(2.19505, abs=1e-4)


def test_small_amplitude_limits():
    lc = limit_cycle(UNIT)
    dc = delta_constants(UNIT, 0.3, 1e-10)
    assert dc.delta1 == pytest.approx(lc.z1 - 0.3, abs=1e-9)
    assert dc.delta2 == pytest.approx(lc.z2 - 0.3, abs=1e-9)
    # the sigma -> 0 limit puts both at the zeros themselves
    dc = delta_constants(UNIT, 1e-10, 0.5)
    assert (dc.delta1, dc.delta2) == pytest.approx((lc.z1, lc.z2), abs=1e-9)


@given(settings())
def test_delta_constant_existence(setting):
    p, sigma, a = setting
    lc = limit_cycle(p)
    dc = delta_constants(p, sigma, a, lc)
    gain = a * (1 - math.exp(-sigma))
    assert (dc.delta2 is not None) == (p.beta_U > gain)
    assert (dc.delta_inf is not None) == (a > p.beta_U * (1 - math.exp(-sigma)))
    if dc.delta_inf is not None:
        assert dc.delta_inf < lc.z2 + sigma
        # the onset lies past the falling zero only for a pulse taller than beta_U
        if a > p.beta_U * (1 + 1e-9):
            assert dc.delta_inf > lc.z2
        elif a < p.beta_U * (1 - 1e-9):
            assert dc.delta_inf < lc.z2


def test_undefined_constant_names_condition():
    dc = delta_constants(UNIT, 1.0, 5.0)
    with pytest.raises(Undefined, match="beta_U"):
        dc.require("delta2")


@pytest.mark.parametrize("p, pulse, label", [
    (FIG_FNFP, (2.23, 0.6, 0.52), CaseLabel.FNFP1),
    (ModelParams(1.0, 0.6, 0.4), (2.06, 0.4, 0.85), CaseLabel.FNFP3),
    (FIG_FNFP, (2.04, 0.6, 0.52), CaseLabel.FNFP4),
    (FIG_FNFP, (2.13, 0.6, 0.52), CaseLabel.FNFP4),
    (UNIT, (0.0, 0.1, 0.05), CaseLabel.RNRN),
])
def test_classify_examples(p, pulse, label):
    assert classify(p, pulse) is label


def test_classify_domain():
    lc = limit_cycle(UNIT)
    with pytest.raises(OutOfRange):
        classify(UNIT, (lc.period, 0.5, 0.5))
    with pytest.raises(OutOfRange):
        classify(UNIT, (-0.1, 0.5, 0.5))
    with pytest.raises(ValidationError):
        classify(UNIT, (1.0, 0.5, 0.0))
    with pytest.raises(ValidationError):
        delta_constants(UNIT, 1.5, 0.5)


def test_base_intervals_partition_the_cycle():
    rng = np.random.default_rng(11)
    done = 0
    while done < 1000:
        p, sigma, a = random_setting(rng)
        lc = limit_cycle(p)
        dc = delta_constants(p, sigma, a, lc)
        if not dc.delta4 < lc.z2:
            continue
        grid = np.linspace(0.0, lc.period, 10_000, endpoint=False)
        hits = np.zeros(grid.size, dtype=int)
        for iv in case_intervals(p, sigma, a, lc, dc):
            hits += iv.contains(grid)
        assert np.all(hits == 1)
        done += 1


@given(settings(), st.floats(0.0, 1.0, exclude_max=True))
def test_labels_follow_the_sign_conditions(setting, frac):
    p, sigma, a = setting
    lc = limit_cycle(p)
    delta = frac * lc.period
    label = classify(p, (delta, sigma, a), lc)
    traj = solve(p, None, ForcingSchedule.single(delta, sigma, a), delta + sigma + 1e-9)
    x_end = traj(delta + sigma)
    assume(abs(x_end) > 1e-9 and abs(traj(delta)) > 1e-9)
    start_rising = delta < lc.t_max
    assert label.value[0] == ("R" if start_rising else "F")
    assert label.value[1] == ("P" if traj(delta) > 0 else "N")
    if label not in FNFP_FAMILY:
        assert label.value[3] == ("P" if x_end > 0 else "N")
    else:
        assert x_end > 0


def _pulse_zero(traj, lo, hi):
    return brentq(traj, lo, hi, xtol=1e-15)


def test_third_zero_closed_form():
    p, (delta, sigma, a) = FIG_FNFP, (2.23, 0.6, 0.52)
    lc = limit_cycle(p)
    traj = solve(p, None, ForcingSchedule.single(delta, sigma, a), 8.0)
    z3 = _pulse_zero(traj, delta + 1e-9, delta + sigma)
    closed = math.log((a * math.exp(delta) - p.beta_U * math.exp(lc.z2)) / (a - p.beta_U))
    assert delta < z3 < delta + sigma
    assert z3 == pytest.approx(closed, abs=1e-9)
    r = pulse_response(p, (delta, sigma, a), lc)
    assert r.perturbed_zeros[2] == pytest.approx(z3, abs=1e-12)


@pytest.mark.parametrize("delta", [2.04, 2.13])
def test_fourth_zero_closed_form(delta):
    # the closed form assumes the lower feedback level lasts until z4 (x(T~) < 0)
    p, sigma, a = FIG_FNFP, 0.6, 0.52
    lc = limit_cycle(p)
    traj = solve(p, None, ForcingSchedule.single(delta, sigma, a), 8.0)
    assert traj(lc.period) < 0.0
    z3 = traj.zeros[traj.zeros > delta][0]
    z4 = _pulse_zero(traj, z3 + 1e-9, traj.zeros[traj.zeros > z3][0] + 1e-9)
    closed = math.log((p.beta_U * math.exp(lc.z2) + a * math.expm1(sigma) * math.exp(delta)) / p.beta_U)
    assert z4 == pytest.approx(closed, abs=1e-9)


def test_fourth_zero_after_recovery():
    p, (delta, sigma, a) = FIG_FNFP, (2.23, 0.6, 0.52)
    lc = limit_cycle(p)
    traj = solve(p, None, ForcingSchedule.single(delta, sigma, a), 8.0)
    assert traj(lc.period) > 0.0
    z = traj.zeros[traj.zeros > delta]
    assert _pulse_zero(traj, z[0] + 1e-9, z[1] + 1e-6) == pytest.approx(z[1], abs=1e-12)


@given(settings(), st.floats(0.0, 1.0, exclude_max=True))
def test_closed_resetting_time_matches_phase_matching(setting, frac):
    p, sigma, a = setting
    lc = limit_cycle(p)
    try:
        r = pulse_response(p, (frac * lc.period, sigma, a), lc)
    except InfiniteResetting:
        assume(False)
    assert r.F >= sigma - 1e-12
    if r.F_closed is not None:
        assert r.F_closed == pytest.approx(r.F_matched, abs=1e-9)
    if r.T_case is not None:
        assert r.new_phase == pytest.approx(r.T - lc.period)


@pytest.mark.parametrize("label", ["RNRN", "RPFP", "FPFP", "FNRN"])
def test_pulse_within_one_phase_resets_at_offset(label):
    rng = np.random.default_rng(3)
    seen = 0
    for _ in range(400):
        p, sigma, a = random_setting(rng)
        lc = limit_cycle(p)
        dc = delta_constants(p, sigma, a, lc)
        iv = next(iv for iv in case_intervals(p, sigma, a, lc, dc) if iv.label == label)
        if iv.empty or iv.hi - iv.lo < 1e-3:
            continue
        delta = 0.5 * (max(iv.lo, 0.0) + min(iv.hi, lc.period))
        r = pulse_response(p, (delta, sigma, a), lc, dc)
        assert r.case.value == label
        assert r.F_stated == sigma
        # the shifted cycle may still be below its maximum when the pulse ends
        if label in ("RNRN", "FNRN"):
            assert r.F == pytest.approx(sigma, abs=1e-12)
        seen += 1
    assert seen > 0


def test_infinite_resetting_at_delta_inf():
    dc = delta_constants(RAPID, 0.39235, 0.8)
    with pytest.raises(InfiniteResetting):
        pulse_response(RAPID, (dc.delta_inf, 0.39235, 0.8))


def test_remark_rpfn_empty_when_delta2_late():
    rng = np.random.default_rng(5)
    seen = 0
    for _ in range(400):
        p, sigma, a = random_setting(rng)
        lc = limit_cycle(p)
        dc = delta_constants(p, sigma, a, lc)
        if dc.delta2 is None or not dc.delta2 > lc.t_max:
            continue
        grid = np.linspace(0.0, lc.period, 500, endpoint=False)
        assert CaseLabel.RPFN not in {classify(p, (d, sigma, a), lc, dc) for d in grid}
        seen += 1
    assert seen > 50


def test_late_delta2_does_not_bound_amplitude():
    # delta2 > t_max holds for any admissible a once z2 - t_max > sigma
    p = ModelParams(1.0750533211782773, 0.9944044492139976, 0.37696782963415676)
    sigma, a = 0.15468075708309031, 1.9983934243768893
    lc = limit_cycle(p)
    dc = delta_constants(p, sigma, a, lc)
    assert dc.delta2 > lc.t_max
    assert a > p.beta_U


def test_cycle_length_maximum_at_delta2():
    lc = limit_cycle(UNIT)
    for sigma in (0.2, 0.6, 1.0):
        dc = delta_constants(UNIT, sigma, 0.5, lc)
        expected = lc.period + math.log(1.0 / (1.0 - 0.5 * (1 - math.exp(-sigma))))
        assert pulse_response(UNIT, (dc.delta2, sigma, 0.5), lc, dc).T == pytest.approx(expected, abs=1e-9)


def test_response_curve_discontinuities():
    lc = limit_cycle(UNIT)
    grid = np.linspace(0.0, lc.period, 500, endpoint=False)
    curve = response_curve(UNIT, 1.0, 0.5, grid)
    dc = delta_constants(UNIT, 1.0, 0.5, lc)
    assert lc.t_max - 1.0 == pytest.approx(0.48988, abs=1e-5)
    assert lc.period + dc.delta1 == pytest.approx(2.19500, abs=1e-5)
    big = grid[1:][np.abs(np.diff(curve.F)) > 0.1]
    assert big.size == 2
    for where in (dc.delta2, lc.period + dc.delta1):
        assert np.min(np.abs(big - where)) <= grid[1]
    assert np.max(np.abs(np.diff(curve.T))) < 0.02
    assert np.all(curve.F < curve.T)


def test_stated_offset_reset_jumps_at_first_zero():
    # F = sigma on RPFP makes F jump at z~1 = t_max - sigma; the matched F does not
    lc = limit_cycle(UNIT)
    before = pulse_response(UNIT, (lc.z1 - 1e-4, 1.0, 0.5), lc)
    after = pulse_response(UNIT, (lc.z1 + 1e-4, 1.0, 0.5), lc)
    assert (before.case, after.case) == (CaseLabel.RNRP, CaseLabel.RPFP)
    assert abs(after.F - before.F) < 1e-3
    assert before.F_stated - after.F_stated > 0.1


def test_cycle_length_continuity_refines():
    lc = limit_cycle(UNIT)
    jumps = []
    for n in (500, 1000):
        grid = np.linspace(0.0, lc.period, n, endpoint=False)
        jumps.append(np.max(np.abs(np.diff(response_curve(UNIT, 0.6, 0.3, grid).T))))
    assert jumps[1] < 0.6 * jumps[0]


@pytest.mark.parametrize("sigma, a", [(1.0, 0.5), (0.5, 0.3), (0.8, 1.5)])
def test_endpoint_closure(sigma, a):
    lc = limit_cycle(UNIT)
    start = pulse_response(UNIT, (0.0, sigma, a), lc)
    end = pulse_response(UNIT, (lc.period - 1e-9, sigma, a), lc)
    assert end.T == pytest.approx(start.T, abs=1e-6)
    assert end.F == pytest.approx(start.F, abs=1e-6)


def test_unstable_cycle_bounds():
    uc = unstable_cycle(RAPID, 0.39235, 0.8)
    lc = limit_cycle(RAPID)
    assert uc.period == pytest.approx(lc.period - 2.19505, abs=1e-4)
    assert RAPID.tau - 0.39235 < uc.period < RAPID.tau
    assert lc.x_min < uc.x_min < 0.0 < uc.x_max < lc.x_max


def test_rapid_cycle_width_rounds_to_quoted_value():
    assert round(rapid_cycle_width(RAPID), 5) == 0.39235


@given(st.floats(0.05, 0.999), st.floats(1.001, 2.0))
def test_unstable_period_in_window(frac, ratio):
    # a > beta_U puts the onset past the falling zero and the period in (tau - sigma, tau)
    sigma = frac * RAPID.tau
    uc = unstable_cycle(RAPID, sigma, ratio * RAPID.beta_U)
    assert RAPID.tau - sigma < uc.period < RAPID.tau
