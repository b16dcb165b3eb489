"""Periodic pulse forcing: amplitude threshold, forced cycle, locking.

Above the threshold amplitude ``a1`` a train started at the falling zero of
the free cycle keeps the solution non-negative, the feedback stays at
``-beta_U`` and the pulse-to-pulse map is affine with contraction
``e^{-T_p}``. Its fixed point is the forced cycle, locked 1:1 to the forcing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import ForcingSchedule, HistoryFunction, Trajectory, solve
from .errors import BelowThreshold, ValidationError
from .model import ModelParams, limit_cycle

THRESHOLD_RTOL = 1e-12
LOCK_TOL = 1e-8
MAX_LOCK_RATIO = 64
CONVERGED_COUNT = 5
CONVERGED_TOL = 1e-10


def _check_widths(sigma: float, alpha: float) -> None:
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    if not (math.isfinite(alpha) and alpha >= 0.0):
        raise ValidationError(f"alpha must be finite and >= 0, got {alpha}")


def a1_threshold(beta_U: float, sigma: float, alpha: float) -> float:
    """Smallest amplitude keeping the forced solution non-negative."""
    _check_widths(sigma, alpha)
    if not beta_U > 0.0:
        raise ValidationError("beta_U must be > 0")
    return beta_U * (math.exp(alpha) - math.exp(-sigma)) / -math.expm1(-sigma)


def forced_amplitude(sigma: float, alpha: float, a: float) -> float:
    """Peak-to-trough height of the forced cycle."""
    _check_widths(sigma, alpha)
    return a * -math.expm1(-sigma) * math.expm1(alpha) / (math.exp(alpha) - math.exp(-sigma))


@dataclass(frozen=True)
class ForcedCycle:
    """Extrema of the 1:1 forced cycle; the minimum sits at each pulse onset."""

    x_min_p: float
    x_max_p: float
    period: float
    a1: float
    sigma: float
    alpha: float
    amplitude: float


def _require_threshold(p: ModelParams, sigma: float, alpha: float, a: float) -> float:
    a1 = a1_threshold(p.beta_U, sigma, alpha)
    if a < a1 * (1.0 - THRESHOLD_RTOL):
        raise BelowThreshold(f"amplitude {a} below threshold a1={a1}; simulate instead")
    return a1


def forced_cycle(p: ModelParams, sigma: float, alpha: float, a: float) -> ForcedCycle:
    a1 = _require_threshold(p, sigma, alpha, a)
    gain = a * -math.expm1(-sigma)
    den = math.exp(alpha) - math.exp(-sigma)
    x_min = -p.beta_U + gain / den
    x_max = -p.beta_U + gain * math.exp(alpha) / den
    return ForcedCycle(x_min, x_max, sigma + alpha, a1, sigma, alpha, a)


@dataclass(frozen=True)
class PulseMap:
    """Solution values at pulse onsets ``x(Delta_k)`` and offsets ``x(Delta_k + sigma)``."""

    onsets: np.ndarray
    at_onset: np.ndarray
    at_offset: np.ndarray
    mode: str


def _closed_pulse_map(p: ModelParams, sigma: float, alpha: float, a: float, n: int):
    tp = sigma + alpha
    k = np.arange(n + 1)
    partial = np.cumsum(np.exp(-k * tp))                      # sum_{j=0}^{k} e^{-j T_p}
    before = np.concatenate([[0.0], partial[:-1]])            # sum_{j=0}^{k-1}
    gain = a * -math.expm1(-sigma)
    at_onset = p.beta_U * np.expm1(-k * tp) + gain * math.exp(-alpha) * before
    at_offset = p.beta_U * np.expm1(-k * tp - sigma) + gain * partial
    return at_onset, at_offset


def iterate_pulse_map(p: ModelParams, forcing: ForcingSchedule, n: int,
                      mode: str = "closed", history: Optional[HistoryFunction] = None) -> PulseMap:
    """Values at the first ``n + 1`` pulse onsets and offsets.

    ``mode="closed"`` uses the geometric-series form, valid for a train that
    starts at the falling zero of the free cycle with ``a >= a1``.
    ``mode="simulated"`` samples the exact solver for any start and history.
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    if forcing.pulse_count is not None and forcing.pulse_count < n + 1:
        raise ValidationError(f"schedule has {forcing.pulse_count} pulses, need {n + 1}")
    if math.isinf(forcing.alpha):
        raise ValidationError("pulse map needs a periodic schedule")
    onsets = forcing.delta0 + np.arange(n + 1) * forcing.period
    if mode == "closed":
        _require_threshold(p, forcing.sigma, forcing.alpha, forcing.amplitude)
        z2 = limit_cycle(p).z2
        if history is not None or abs(forcing.delta0 - z2) > 1e-12 * max(1.0, z2):
            raise ValidationError("closed form needs the default history and delta0 = z~2")
        on, off = _closed_pulse_map(p, forcing.sigma, forcing.alpha, forcing.amplitude, n)
    elif mode == "simulated":
        traj = solve(p, history, forcing, float(onsets[-1] + forcing.sigma) + 1e-9 * forcing.period)
        on = traj(onsets)
        off = traj(onsets + forcing.sigma)
    else:
        raise ValidationError(f"mode must be 'closed' or 'simulated', got {mode!r}")
    return PulseMap(onsets, np.atleast_1d(on), np.atleast_1d(off), mode)


def converged_index(values, target: float, count: int = CONVERGED_COUNT,
                    tol: float = CONVERGED_TOL) -> Optional[int]:
    """First index from which ``count`` consecutive values lie within ``tol`` of ``target``."""
    close = np.abs(np.asarray(values, dtype=float) - target) <= tol
    run = 0
    for k, ok in enumerate(close):
        run = run + 1 if ok else 0
        if run == count:
            return k - count + 1
    return None


def lag_defect(traj: Trajectory, lag: float, t_lo: float, t_hi: float) -> float:
    """Exact ``max |x(t) - x(t + lag)|`` over ``[t_lo, t_hi]``.

    Between joints of both pieces the difference is ``c + k e^{-t}``, which is
    monotone, so its extremes sit at the joints.
    """
    own = traj.t0[(traj.t0 > t_lo) & (traj.t0 < t_hi)]
    shifted = traj.t0[(traj.t0 > t_lo + lag) & (traj.t0 < t_hi + lag)] - lag
    t = np.unique(np.concatenate([[t_lo, t_hi], own, shifted]))
    # each joint belongs to two pieces; probe both sides
    eps = 1e-12 * max(1.0, abs(t_hi))
    probes = np.clip(np.concatenate([t, t - eps, t + eps]), t_lo, t_hi)
    return float(np.max(np.abs(traj(probes) - traj(probes + lag))))


def detect_locking(traj: Trajectory, T_p: float, t_lo: float = 0.0,
                   max_q: int = MAX_LOCK_RATIO, tol: float = LOCK_TOL) -> Optional[int]:
    """Smallest ``q`` with ``x(t) = x(t + q T_p)`` on a window at the end of ``traj``.

    The window has length ``max(tau, T_p)``, enough to fix the state of the
    delay equation, and must start after ``t_lo`` (the discarded transient).
    Returns None when no ratio up to ``max_q`` fits the available record.
    """
    if not T_p > 0.0:
        raise ValidationError("T_p must be > 0")
    if max_q < 1:
        raise ValidationError("max_q must be >= 1")
    if not tol > 0.0:
        raise ValidationError("tol must be > 0")
    width = max(traj.tau, T_p)
    for q in range(1, max_q + 1):
        lag = q * T_p
        hi = traj.t_end - lag
        lo = hi - width
        if lo < max(t_lo, 0.0):
            return None
        if lag_defect(traj, lag, lo, hi) < tol:
            return q
    return None


@dataclass(frozen=True)
class LockReport:
    q: Optional[int]
    T_p: float
    period: Optional[float]
    t_end: float


def lock_ratio(p: ModelParams, forcing: ForcingSchedule, transient: float, record: float,
               history: Optional[HistoryFunction] = None, max_q: int = MAX_LOCK_RATIO,
               tol: float = LOCK_TOL) -> LockReport:
    """Simulate ``transient + record`` time units and report the locking ratio."""
    if math.isinf(forcing.alpha):
        raise ValidationError("locking needs a periodic schedule")
    t_end = transient + record
    traj = solve(p, history, forcing, t_end)
    q = detect_locking(traj, forcing.period, transient, max_q, tol)
    return LockReport(q, forcing.period, None if q is None else q * forcing.period, t_end)
