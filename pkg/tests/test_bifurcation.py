import numpy as np
import pytest

from pulsedde import (ForcingSchedule, ModelParams, SectionSpec, SweepSpec, ValidationError,
                      a1_threshold, delay_embedding, limit_cycle, poincare_section, solve, sweep,
                      window_structure)
from pulsedde.bifurcation import distinct, level_crossings

BASE = ModelParams(1.0, 0.7, 1.4)


def train(p=BASE, a=0.9):
    return ForcingSchedule.periodic(limit_cycle(p).z2, 0.6, 0.3, a)


def test_sweep_is_deterministic():
    spec = SweepSpec("a", 0.8, 1.2, mesh_count=12, first_transient_periods=50.0)
    one, two = sweep(BASE, train(), spec), sweep(BASE, train(), spec)
    for r1, r2 in zip(one, two):
        assert r1.value == r2.value
        assert np.array_equal(r1.maxima, r2.maxima) and np.array_equal(r1.minima, r2.minima)


def test_zero_amplitude_gives_the_free_extrema():
    lc = limit_cycle(BASE)
    spec = SweepSpec("a", 0.0, 1.4, mesh_count=8, first_transient_periods=50.0)
    first = sweep(BASE, train(), spec)[0]
    assert first.value == 0.0
    np.testing.assert_allclose(first.distinct_maxima(), [lc.x_max], atol=1e-12)
    np.testing.assert_allclose(first.distinct_minima(), [lc.x_min], atol=1e-12)


def test_lowest_minimum_rises_with_amplitude():
    spec = SweepSpec("a", 0.0, 1.4, mesh_count=30, first_transient_periods=50.0)
    lows = np.array([r.minima.min() for r in sweep(BASE, train(), spec)])
    assert lows[-10:].mean() > lows[:10].mean()
    assert lows[-1] > lows[0]


def test_decreasing_direction_reverses_the_mesh():
    spec = SweepSpec("beta_U", 0.6, 0.8, mesh_count=5, direction="dec",
                     first_transient_periods=20.0)
    assert [r.value for r in sweep(BASE, train(), spec)] == list(np.linspace(0.6, 0.8, 5)[::-1])


def test_cold_start_points_are_independent():
    spec = SweepSpec("a", 0.9, 1.3, mesh_count=5, cold_start=True, first_transient_periods=40.0,
                     record_periods=5.0)
    recs = sweep(BASE, train(), spec)
    threaded = sweep(BASE, train(), SweepSpec(**{**spec.__dict__, "jobs": 2}))
    for rec, other in zip(recs, threaded):
        assert np.array_equal(rec.maxima, other.maxima)
    forcing = train(a=float(recs[2].value))
    traj = solve(BASE, None, forcing, 45.0 * forcing.period)
    times, vals, kinds = traj.extrema(40.0 * forcing.period, traj.t_end)
    np.testing.assert_array_equal(vals[kinds > 0], recs[2].maxima)


def test_sweep_extrema_are_breaking_points():
    spec = SweepSpec("sigma", 0.4, 0.6, mesh_count=3, cold_start=True,
                     first_transient_periods=20.0)
    for rec in sweep(BASE, train(), spec):
        forcing = ForcingSchedule.periodic(limit_cycle(BASE).z2, rec.value, 0.3, 0.9)
        traj = solve(BASE, None, forcing, 25.5 * forcing.period)
        assert rec.maxima.size > 0 and rec.minima.size > 0
        assert np.all(np.isin(rec.max_times, traj.t0)) and np.all(np.isin(rec.min_times, traj.t0))
        np.testing.assert_array_equal(traj(rec.max_times), rec.maxima)


def test_tau_sweep_runs():
    spec = SweepSpec("tau", 0.6, 1.0, mesh_count=3, first_transient_periods=20.0)
    assert len(sweep(BASE, train(), spec)) == 3


@pytest.mark.parametrize("kwargs", [
    dict(parameter="gamma"), dict(mesh_count=1), dict(direction="up"), dict(lo=2.0),
    dict(record_periods=0.0),
])
def test_sweep_spec_validation(kwargs):
    args = dict(parameter="a", lo=0.0, hi=1.0)
    args.update(kwargs)
    with pytest.raises(ValidationError):
        SweepSpec(**args)


def test_sweep_needs_a_periodic_train():
    with pytest.raises(ValidationError):
        sweep(BASE, ForcingSchedule.single(1.0, 0.6, 0.9), SweepSpec("a", 0.0, 1.0, mesh_count=2))


def test_window_structure_validation():
    with pytest.raises(ValidationError):
        window_structure(BASE, train(), SweepSpec("a", 0.0, 1.0, mesh_count=2), probe_every=0)


def test_window_structure_labels_a_locked_orbit():
    spec = SweepSpec("a", 1.1, 1.1 + 1e-9, mesh_count=2, first_transient_periods=450.0 / 0.9)
    windows = window_structure(BASE, train(a=1.1), spec, probe_every=1)
    assert len(windows) == 1
    assert windows[0].ratio == 5 and windows[0].label >= 1


def test_distinct_merges_close_values():
    assert list(distinct([1.0, 1.0 + 1e-9, 2.0, 0.5])) == [0.5, 1.0, 2.0]


def test_one_to_one_orbit_pierces_section_once():
    p = BASE
    a = 1.2 * a1_threshold(p.beta_U, 0.6, 0.3)
    forcing = train(a=a)
    traj = solve(p, None, forcing, 120.0)
    lo, hi = forcing.delta0 + 60.0, forcing.delta0 + 60.0 + 20 * forcing.period
    vmin, vmax = traj.extrema(lo, hi)[1].min(), traj.extrema(lo, hi)[1].max()
    sec = poincare_section(traj, SectionSpec(0.5 * (vmin + vmax), "both"), lo, hi)
    for d in (1, -1):
        pts = sec.x_tau[sec.direction == d]
        assert pts.size == 20
        assert distinct(pts, 1e-9).size == 1


def test_locked_orbit_gives_finitely_many_section_points():
    forcing = train(a=1.1)
    traj = solve(BASE, None, forcing, 500.0)
    q_period = 5 * forcing.period
    lo = 450.0
    sec = poincare_section(traj, SectionSpec(0.14, "rising"), lo, lo + 10 * q_period)
    one_turn = level_crossings(traj, 0.14, lo, lo + q_period)[1]
    per_turn = int(np.sum(one_turn > 0))
    assert per_turn >= 1
    assert distinct(sec.x_tau, 1e-9).size == per_turn
    np.testing.assert_allclose(sec.x_tau[per_turn:], sec.x_tau[:-per_turn], atol=1e-9)
    np.testing.assert_allclose(sec.t_c[per_turn:] - sec.t_c[:-per_turn], q_period, atol=1e-9)


def test_section_above_maximum_is_empty():
    traj = solve(BASE, None, train(), 100.0)
    sec = poincare_section(traj, SectionSpec(10.0, "both"), 10.0, 100.0)
    assert sec.t_c.size == 0 and sec.x_tau.size == 0


def test_section_points_use_the_delays():
    traj = solve(BASE, None, train(), 100.0)
    sec = poincare_section(traj, SectionSpec(0.14, "falling", delays=(0.5, 1.5)), 10.0, 100.0)
    assert np.all(sec.direction == -1)
    np.testing.assert_allclose(traj(sec.t_c), 0.14, atol=1e-12)
    np.testing.assert_allclose(sec.x_tau, traj(sec.t_c - 0.5), atol=0)
    np.testing.assert_allclose(sec.x_2tau, traj(sec.t_c - 1.5), atol=0)


def test_section_validation():
    traj = solve(BASE, None, train(), 10.0)
    with pytest.raises(ValidationError):
        SectionSpec(float("nan"))
    with pytest.raises(ValidationError):
        SectionSpec(0.1, "up")
    with pytest.raises(ValidationError):
        poincare_section(traj, SectionSpec(), 0.5, 5.0)


def test_one_to_one_embedding_is_a_single_loop():
    a = 1.2 * a1_threshold(BASE.beta_U, 0.6, 0.3)
    forcing = train(a=a)
    traj = solve(BASE, None, forcing, 120.0)
    lo = forcing.onset(60)
    tp = forcing.period
    xd, x = delay_embedding(traj, lo, lo + 3 * tp, per_segment=16)
    assert np.all(np.isfinite(xd)) and xd.size == x.size
    t = np.linspace(lo, lo + tp, 400)
    for k in (1, 2):
        np.testing.assert_allclose(traj(t + k * tp), traj(t), atol=1e-12)
        np.testing.assert_allclose(traj(t + k * tp - BASE.tau), traj(t - BASE.tau), atol=1e-12)


def test_embedding_includes_lagged_joints():
    traj = solve(BASE, None, train(), 30.0)
    xd, x = delay_embedding(traj, 5.0, 10.0)
    joints = traj.t0[(traj.t0 > 4.0) & (traj.t0 < 9.0)]
    for j in joints:
        assert np.min(np.abs(xd - traj(j))) < 1e-14


def test_embedding_validation():
    traj = solve(BASE, None, train(), 10.0)
    with pytest.raises(ValidationError):
        delay_embedding(traj, -0.5, 5.0)
    with pytest.raises(ValidationError):
        delay_embedding(traj, 5.0, 5.0)
