"""Orbit diagrams, delay embeddings and projected Poincare sections.

A sweep walks a parameter mesh and records the local extrema of the forced
solution at each point. By default each point starts from the last ``tau``
time units of its predecessor and the pulse train carries on without a phase
jump, so the diagram follows one attractor branch.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .engine import ForcingSchedule, HistoryFunction, Trajectory, solve
from .errors import ValidationError
from .model import ModelParams

PARAMETERS = ("a", "sigma", "beta_U", "tau")
CLUSTER_TOL = 1e-7


@dataclass(frozen=True)
class SweepSpec:
    """Mesh and recording protocol; lengths are in forcing periods."""

    parameter: str
    lo: float
    hi: float
    mesh_count: int = 10_000
    direction: str = "inc"
    transient_periods: float = 5.5
    record_periods: float = 5.5
    first_transient_periods: float = 220.0
    cold_start: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValidationError(f"parameter must be one of {PARAMETERS}")
        if self.mesh_count < 2:
            raise ValidationError("mesh_count must be >= 2")
        if self.direction not in ("inc", "dec"):
            raise ValidationError("direction must be 'inc' or 'dec'")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValidationError("need finite lo < hi")
        for name in ("transient_periods", "record_periods", "first_transient_periods"):
            if not getattr(self, name) >= 0.0:
                raise ValidationError(f"{name} must be >= 0")
        if not self.record_periods > 0.0:
            raise ValidationError("record_periods must be > 0")

    def mesh(self) -> np.ndarray:
        values = np.linspace(self.lo, self.hi, self.mesh_count)
        return values if self.direction == "inc" else values[::-1]


def distinct(values, tol: float = CLUSTER_TOL) -> np.ndarray:
    """Sorted values with neighbours closer than ``tol`` merged."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return v
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


@dataclass(frozen=True)
class ExtremaRecord:
    value: float
    maxima: np.ndarray
    minima: np.ndarray
    max_times: np.ndarray
    min_times: np.ndarray

    def distinct_maxima(self, tol: float = CLUSTER_TOL) -> np.ndarray:
        return distinct(self.maxima, tol)

    def distinct_minima(self, tol: float = CLUSTER_TOL) -> np.ndarray:
        return distinct(self.minima, tol)


def _apply(p: ModelParams, forcing: ForcingSchedule, name: str, value: float):
    if name == "a":
        return p, replace(forcing, amplitude=value)
    if name == "sigma":
        return p, replace(forcing, sigma=value)
    if name == "beta_U":
        return replace(p, beta_U=value), forcing
    return replace(p, tau=value), forcing


def _record(traj: Trajectory, value: float, t_lo: float) -> ExtremaRecord:
    times, vals, kinds = traj.extrema(t_lo, traj.t_end)
    up = kinds > 0
    return ExtremaRecord(float(value), vals[up], vals[~up], times[up], times[~up])


def _run_point(p, forcing, history, transient, record, value):
    traj = solve(p, history, forcing, transient + record)
    return traj, _record(traj, value, transient)


def sweep(p0: ModelParams, forcing0: ForcingSchedule, spec: SweepSpec,
          history: Optional[HistoryFunction] = None) -> list:
    """Extrema over the parameter mesh, in traversal order.

    ``forcing0`` must be a periodic train; its ``delta0`` and ``history``
    (default: free cycle ending at its minimum) set up the first point.
    """
    if math.isinf(forcing0.alpha) or forcing0.pulse_count is not None:
        raise ValidationError("sweep needs an unbounded periodic pulse train")
    values = spec.mesh()
    if spec.cold_start:
        def point(value):
            p, forcing = _apply(p0, forcing0, spec.parameter, float(value))
            tp = forcing.period
            hist = history if spec.parameter != "tau" else None
            return _run_point(p, forcing, hist, spec.first_transient_periods * tp,
                              spec.record_periods * tp, value)[1]
        if spec.jobs > 1:
            with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
                return list(pool.map(point, values))
        return [point(v) for v in values]

    return [rec for rec, _ in _walk(p0, forcing0, spec, history)]


def _walk(p0, forcing0, spec, history):
    # yields each record with the state handed to the next mesh point
    p, forcing = p0, forcing0
    hist = history
    values = spec.mesh()
    for k, value in enumerate(values):
        p, forcing = _apply(p, forcing, spec.parameter, float(value))
        tp = forcing.period
        periods = spec.first_transient_periods if k == 0 else spec.transient_periods
        transient, record = periods * tp, spec.record_periods * tp
        traj, rec = _run_point(p, forcing, hist, transient, record, value)
        t_end = traj.t_end
        hist = HistoryFunction.from_trajectory(traj, t_end, p.tau)
        forcing = forcing.shifted(t_end)
        yield rec, (p, forcing, hist)
        if k + 1 < values.size and spec.parameter == "tau":
            hist = HistoryFunction.from_trajectory(traj, t_end, float(values[k + 1]))


@dataclass(frozen=True)
class Window:
    """Run of consecutive probes with the same attractor label.

    ``label`` is the number of distinct maxima of a locked orbit, or 0 for
    irregular (no locking ratio up to the search cap).
    """

    label: int
    lo: float
    hi: float
    probes: int
    ratio: Optional[int]


def attractor_label(p: ModelParams, forcing: ForcingSchedule, history: HistoryFunction,
                    settle_periods: float = 300.0, probe_periods: float = 100.0,
                    tol: float = 1e-6) -> tuple:
    """``(q, distinct maxima)`` of the attractor reached from a state; q is None
    when no locking ratio is found."""
    from .periodic import detect_locking

    tp = forcing.period
    settle = settle_periods * tp
    traj = solve(p, history, forcing, settle + probe_periods * tp)
    q = detect_locking(traj, tp, settle)
    _, vals, kinds = traj.extrema(settle, traj.t_end)
    return q, int(distinct(vals[kinds > 0], tol).size)


def window_structure(p0: ModelParams, forcing0: ForcingSchedule, spec: SweepSpec,
                     history: Optional[HistoryFunction] = None, probe_every: int = 10,
                     settle_periods: float = 300.0, probe_periods: float = 100.0) -> list:
    """Walk the sweep and label the attractor every ``probe_every`` mesh points.

    The walk is the same warm-started sequence as :func:`sweep`; each probe
    continues from the current state long enough to settle, so the labels are
    not blurred by the short per-point transients.
    """
    if probe_every < 1:
        raise ValidationError("probe_every must be >= 1")
    windows = []
    for k, (rec, (p, forcing, hist)) in enumerate(_walk(p0, forcing0, spec, history)):
        if k % probe_every:
            continue
        q, n_max = attractor_label(p, forcing, hist, settle_periods, probe_periods)
        label = 0 if q is None else n_max
        if windows and windows[-1].label == label:
            w = windows[-1]
            ratio = w.ratio if w.ratio == q else None
            windows[-1] = Window(label, w.lo, rec.value, w.probes + 1, ratio)
        else:
            windows.append(Window(label, rec.value, rec.value, 1, q))
    return windows


def delay_embedding(traj: Trajectory, t_lo: float, t_hi: float, tau: Optional[float] = None,
                    per_segment: int = 8):
    """Points ``(x(t - tau), x(t))`` sampled densely, every joint included."""
    tau = traj.tau if tau is None else tau
    if t_lo - tau < traj.t_start - 1e-12 * max(1.0, abs(t_lo)):
        raise ValidationError("window must start at least tau after the trajectory start")
    if not t_hi > t_lo:
        raise ValidationError("need t_hi > t_lo")
    t, _, _, _ = traj.dense(t_lo, t_hi, per_segment)
    lagged = traj.t0[(traj.t0 > t_lo - tau) & (traj.t0 < t_hi - tau)] + tau
    t = np.unique(np.concatenate([t, lagged]))
    return traj(t - tau), traj(t)


@dataclass(frozen=True)
class SectionSpec:
    level: float = 0.14
    direction: str = "rising"
    delays: Optional[tuple] = None

    def __post_init__(self):
        if not math.isfinite(self.level):
            raise ValidationError("section level must be finite")
        if self.direction not in ("rising", "falling", "both"):
            raise ValidationError("direction must be 'rising', 'falling' or 'both'")


@dataclass(frozen=True)
class SectionPoints:
    x_tau: np.ndarray
    x_2tau: np.ndarray
    t_c: np.ndarray
    direction: np.ndarray      # +1 rising, -1 falling


def level_crossings(traj: Trajectory, level: float, t_lo: float, t_hi: float):
    """Times and directions where ``x`` crosses ``level`` strictly, in closed form."""
    a, b, t0, t1 = traj.window(t_lo, t_hi)
    v0 = a + b - level
    v1 = a + b * np.exp(-(t1 - t0)) - level
    up = (v0 < 0.0) & (v1 >= 0.0)
    down = (v0 > 0.0) & (v1 <= 0.0)
    hit = up | down
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = t0[hit] + np.log(b[hit] / (level - a[hit]))
    tc = np.clip(tc, t0[hit], t1[hit])
    return tc, np.where(up[hit], 1, -1).astype(np.int8)


def poincare_section(traj: Trajectory, spec: SectionSpec, t_lo: float, t_hi: float) -> SectionPoints:
    """Crossings of ``x = level`` projected to ``(x(t_c - d1), x(t_c - d2))``."""
    d1, d2 = spec.delays if spec.delays is not None else (traj.tau, 2.0 * traj.tau)
    if t_lo - max(d1, d2) < traj.t_start - 1e-12 * max(1.0, abs(t_lo)):
        raise ValidationError("trajectory must cover the window minus the largest delay")
    tc, dirs = level_crossings(traj, spec.level, t_lo, t_hi)
    if spec.direction == "rising":
        keep = dirs > 0
    elif spec.direction == "falling":
        keep = dirs < 0
    else:
        keep = np.ones(dirs.size, dtype=bool)
    tc, dirs = tc[keep], dirs[keep]
    if tc.size == 0:
        empty = np.empty(0)
        return SectionPoints(empty, empty, empty, np.empty(0, dtype=np.int8))
    return SectionPoints(np.atleast_1d(traj(tc - d1)), np.atleast_1d(traj(tc - d2)), tc, dirs)
