"""Dosing formulas and the neutrophil application.

Concentrations are kept in units of 1e9 cells/kg and times in days at the
boundary; the reduced model runs in ``t = gamma_N * t_days`` with
``x = N - N_star``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import find_peaks

from .engine import ForcingSchedule, HistoryFunction, Trajectory, solve
from .errors import Infeasible, NoConvergence, ValidationError
from .model import ModelParams, RawParams, limit_cycle, normalize_params
from .periodic import a1_threshold, forced_cycle

UNIT = 1e9                  # cells/kg per concentration unit
UNITS = "1e9 cells/kg"
SEVERE_NEUTROPENIA = 0.061  # in UNIT
NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-12


# -- dosing formulas ---------------------------------------------------------

def min_rest_interval(a: float, sigma: float, x_norm: float, beta_U: float) -> float:
    """Rest interval putting the forced-cycle minimum exactly at ``x_norm``.

    Any shorter rest keeps the solution above ``x_norm``.
    """
    if not a > 0.0:
        raise ValidationError("dose amplitude must be > 0")
    if not sigma > 0.0:
        raise ValidationError("sigma must be > 0")
    level = x_norm + beta_U
    if not level > 0.0:
        raise ValidationError("need x_norm + beta_U > 0")
    ratio = (a + (level - a) * math.exp(-sigma)) / level
    if not ratio > 1.0:
        raise Infeasible(f"no positive rest interval reaches x_norm={x_norm} "
                         f"with a={a}, sigma={sigma}")
    return math.log(ratio)


@dataclass(frozen=True)
class BandSpec:
    """Target band ``[f_min * x_norm, f_max * x_norm]`` for the forced cycle."""

    x_norm: float
    f_min: float
    f_max: float

    def __post_init__(self):
        if not self.x_norm > 0.0:
            raise ValidationError("x_norm must be > 0")
        if not 0.0 < self.f_min <= 1.0 <= self.f_max:
            raise ValidationError("need 0 < f_min <= 1 <= f_max")

    @property
    def low(self) -> float:
        return self.f_min * self.x_norm

    @property
    def high(self) -> float:
        return self.f_max * self.x_norm


@dataclass(frozen=True)
class DoseFit:
    a: float
    alpha: float
    sigma: float
    a1: float
    x_min_p: float
    x_max_p: float
    residual: float
    iterations: int
    method: str


def _band_residual(p: ModelParams, band: BandSpec, sigma: float, a: float, alpha: float):
    gain = -math.expm1(-sigma)
    ea = math.exp(alpha)
    den = ea - math.exp(-sigma)
    lo = -p.beta_U + a * gain / den
    hi = -p.beta_U + a * gain * ea / den
    res = np.array([lo - band.low, hi - band.high])
    jac = np.array([
        [gain / den, -a * gain * ea / den**2],
        [gain * ea / den, -a * gain * ea * math.exp(-sigma) / den**2],
    ])
    return res, jac


def _newton_band(p, band, sigma):
    x = np.array([p.beta_U * (band.f_max + 1.0), sigma])
    res, jac = _band_residual(p, band, sigma, *x)
    norm = float(np.max(np.abs(res)))
    for it in range(1, NEWTON_MAX_ITER + 1):
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam > 1e-8:
            trial = x + lam * step
            if trial[1] > 0.0:
                r_t, j_t = _band_residual(p, band, sigma, *trial)
                n_t = float(np.max(np.abs(r_t)))
                if n_t < norm or n_t <= NEWTON_TOL:
                    break
            lam *= 0.5
        else:
            return None
        x, res, jac, norm = trial, r_t, j_t, n_t
        if norm <= NEWTON_TOL:
            return x, norm, it
    return None


def _bisect_band(p, band, sigma):
    # the minimum is linear in a, so a(alpha) is explicit; the maximum is
    # then increasing in alpha along that curve
    gain = -math.expm1(-sigma)

    def amp(alpha):
        return (band.low + p.beta_U) * (math.exp(alpha) - math.exp(-sigma)) / gain

    def gap(alpha):
        return _band_residual(p, band, sigma, amp(alpha), alpha)[0][1]

    hi = 1.0
    while gap(hi) < 0.0:
        hi *= 2.0
        if hi > 1e3:
            return None
    alpha = brentq(gap, 0.0, hi, xtol=1e-15)
    res = _band_residual(p, band, sigma, amp(alpha), alpha)[0]
    return np.array([amp(alpha), alpha]), float(np.max(np.abs(res))), 0


def fit_band(p: ModelParams, band: BandSpec, sigma: float) -> DoseFit:
    """Amplitude and rest interval whose forced cycle spans exactly ``band``."""
    if not 0.0 < sigma <= p.tau * (1 + 1e-12):
        raise ValidationError("need 0 < sigma <= tau")
    if band.f_min == band.f_max:
        raise Infeasible("a band of zero width needs alpha = 0 (continuous dosing)")
    if band.low + p.beta_U <= 0.0:
        raise Infeasible("band lies below the lower feedback level -beta_U")
    found = _newton_band(p, band, sigma)
    method = "newton"
    if found is None:
        found = _bisect_band(p, band, sigma)
        method = "bisection"
    if found is None:
        raise NoConvergence(f"band fit did not converge in {NEWTON_MAX_ITER} iterations")
    (a, alpha), norm, its = found
    a1 = a1_threshold(p.beta_U, sigma, alpha)
    if a < a1 * (1.0 - 1e-12):
        raise Infeasible(f"fitted amplitude {a} is below the threshold a1={a1}")
    fc = forced_cycle(p, sigma, alpha, a)
    return DoseFit(float(a), float(alpha), sigma, a1, fc.x_min_p, fc.x_max_p, float(norm), its,
                   method)


# -- neutrophil mapping ------------------------------------------------------

@dataclass(frozen=True)
class PhysioParams:
    """Neutrophil model constants (rates per day, times in days, cells/kg).

    ``tau_N = tau_NP + tau_NM``; the feedback ceiling is ``A_N f0 Q_star`` and
    its floor ``epsilon`` times that.
    """

    gamma_N: float = 2.4
    tau_NP: float = 5.0
    tau_NM: float = 4.3
    N_star: float = 0.63e9
    Q_star: float = 1.1e6
    A_N: float = 6.55e4
    f0: float = 0.4
    epsilon: float = 1e-4
    eta_NP_max: float = 3.0552
    gamma0_min: float = 0.12
    tau_NM_gcsf: float = 4.3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value > 0.0):
                raise ValidationError(f"{name} must be finite and > 0")
        if not self.epsilon < 1.0:
            raise ValidationError("epsilon must be < 1")

    @property
    def tau_N(self) -> float:
        return self.tau_NP + self.tau_NM

    @property
    def A_N_gcsf(self) -> float:
        return math.exp(self.eta_NP_max * self.tau_NP - self.gamma0_min * self.tau_NM_gcsf)

    def gcsf_amplitude_estimate(self) -> float:
        """Reduced pulse height implied by the G-CSF amplification change (UNIT)."""
        return (self.A_N_gcsf - self.A_N) * self.Q_star * self.f0 / (2.0 * self.gamma_N) / UNIT


def period_estimate(tau_N: float, gamma_N: float, g) -> np.ndarray:
    """Period in days for ``e^{-tau}`` negligible and ``beta_L = g * beta_U``."""
    g = np.asarray(g, dtype=float)
    return 2.0 * tau_N + np.log((g + 1.0) ** 2 / g) / gamma_N


@dataclass(frozen=True)
class NeutrophilModel:
    """Reduced model plus the conversions back to days and cells/kg."""

    params: ModelParams
    gamma_N: float
    N_star: float                 # in UNIT
    period_days: float
    period_estimate_days: float

    def to_reduced_time(self, days):
        return np.asarray(days, dtype=float) * self.gamma_N

    def to_days(self, t):
        return np.asarray(t, dtype=float) / self.gamma_N

    def concentration(self, x):
        return np.asarray(x, dtype=float) + self.N_star

    def with_betas(self, beta_U: float, beta_L: float) -> "NeutrophilModel":
        """Same delay and time scale with the feedback levels replaced."""
        return _neutrophil(ModelParams(self.params.tau, beta_U, beta_L), self.gamma_N, self.N_star)


def _neutrophil(p: ModelParams, gamma_N: float, N_star: float) -> NeutrophilModel:
    lc = limit_cycle(p)
    est = float(period_estimate(p.tau / gamma_N, gamma_N, p.beta_L / p.beta_U))
    return NeutrophilModel(p, gamma_N, N_star, lc.period / gamma_N, est)


def map_neutrophil_model(phys: PhysioParams) -> NeutrophilModel:
    b_L = phys.A_N * phys.f0 * phys.Q_star / UNIT
    raw = RawParams(gamma=phys.gamma_N, tau_raw=phys.tau_N, b_L=b_L,
                    b_U=phys.epsilon * b_L, theta=phys.N_star / UNIT)
    return _neutrophil(normalize_params(raw), phys.gamma_N, phys.N_star / UNIT)


def g_sweep(tau_N: float, gamma_N: float, g_lo: float = 1e-3, g_hi: float = 1e3,
            n: int = 20001) -> tuple:
    """Range of the period estimate over log-spaced ``g``; the minimum sits at g = 1."""
    g = np.concatenate([np.geomspace(g_lo, g_hi, n), [1.0] if g_lo <= 1.0 <= g_hi else []])
    per = period_estimate(tau_N, gamma_N, g)
    return float(per.min()), float(per.max())


# -- simulations -------------------------------------------------------------

def value_range(traj: Trajectory, t_lo: float, t_hi: float) -> tuple:
    """Exact ``(min, max)`` of ``x`` on ``[t_lo, t_hi]``: pieces are monotone."""
    t0 = traj.t0[(traj.t0 > t_lo) & (traj.t0 < t_hi)]
    vals = traj(np.concatenate([[t_lo, t_hi], t0]))
    return float(np.min(vals)), float(np.max(vals))


@dataclass(frozen=True)
class GcsfRun:
    model: NeutrophilModel
    forcing: ForcingSchedule
    trajectory: Trajectory
    start_day: float
    end_day: float
    nadir_before: float
    nadir_after: float
    max_after: float
    severe_after: bool
    settle_days: float

    def concentration(self, days):
        return self.model.concentration(self.trajectory(self.model.to_reduced_time(days)))


def gcsf_simulation(model: NeutrophilModel, dose_amplitude: float, start_day: float = 21.0,
                    end_day: float = 70.0, settle_days: Optional[float] = None,
                    sigma_days: float = 1.0, alpha_days: float = 1.0) -> GcsfRun:
    """Daily pulses from ``start_day``; amplitude in UNIT.

    The post-treatment nadir is taken after ``settle_days`` (default: one
    delay), once the last untreated feedback has worked through.
    """
    if dose_amplitude < 0.0:
        raise ValidationError("G-CSF dose must be >= 0")
    if not end_day > start_day >= 0.0:
        raise ValidationError("need end_day > start_day >= 0")
    g = model.gamma_N
    settle = model.params.tau / g if settle_days is None else settle_days
    if dose_amplitude == 0.0:
        forcing = ForcingSchedule.off()
    else:
        forcing = ForcingSchedule.periodic(start_day * g, sigma_days * g, alpha_days * g,
                                           dose_amplitude)
    traj = solve(model.params, None, forcing, end_day * g)
    before = value_range(traj, 0.0, start_day * g)
    lo_after = min((start_day + settle) * g, end_day * g)
    after = value_range(traj, lo_after, end_day * g) if lo_after < end_day * g else before
    n_star = model.N_star
    return GcsfRun(model, forcing, traj, start_day, end_day, before[0] + n_star,
                   after[0] + n_star, after[1] + n_star,
                   after[0] + n_star < SEVERE_NEUTROPENIA, settle)


def chemo_amplitude(model: NeutrophilModel) -> float:
    """Negative pulse height that would drive daily-dosing nadir to zero (UNIT)."""
    return model.params.beta_U - model.N_star / -math.expm1(-model.params.tau)


def chemo_first_day_value(model: NeutrophilModel, sigma_days: float = 1.0) -> float:
    """Concentration at the end of the first dose, started where the free
    cycle is one dose width before its minimum (UNIT)."""
    p = model.params
    s = sigma_days * model.gamma_N
    a = chemo_amplitude(model)
    x = -p.beta_U + a + (p.beta_U * math.exp(s - p.tau) - a) * math.exp(-s)
    return x + model.N_star


@dataclass(frozen=True)
class ScanResult:
    Tp_days: np.ndarray
    nadir: np.ndarray
    amplitude: np.ndarray
    window: tuple
    amplitude_dose: float
    period_days: float
    units: str = UNITS

    @property
    def maximum(self) -> np.ndarray:
        return self.nadir + self.amplitude

    def resonance_markers(self, count: int = 4) -> np.ndarray:
        """Periods ``n * T/2``, n = 1..count, in days."""
        return np.arange(1, count + 1) * self.period_days / 2.0

    def peaks(self, prominence: float = 0.01, values: Optional[np.ndarray] = None):
        """Nadir peaks standing at least ``prominence`` (UNIT) above their
        surroundings, as ``(Tp_lo, Tp_hi)`` pairs; a flat top spans several
        grid points. Solver rounding on the baseline stays far below the
        default prominence."""
        v = self.nadir if values is None else np.asarray(values)
        _, props = find_peaks(v, prominence=prominence, plateau_size=1)
        return [(float(self.Tp_days[lo]), float(self.Tp_days[hi]))
                for lo, hi in zip(props["left_edges"], props["right_edges"])]


def _chemo_point(model, history, a, sigma, tp_days, window, horizon_days):
    g = model.gamma_N
    tp = tp_days * g
    forcing = ForcingSchedule.periodic(0.0, sigma, max(tp - sigma, 0.0), a)
    traj = solve(model.params, history, forcing, horizon_days * g)
    lo, hi = value_range(traj, window[0] * g, window[1] * g)
    return lo + model.N_star, hi - lo


def chemo_scan(model: NeutrophilModel, Tp_grid: Optional[Sequence[float]] = None,
               window: tuple = (600.0, 2000.0), horizon_days: Optional[float] = None,
               sigma_days: float = 1.0, jobs: int = 1) -> ScanResult:
    """Nadir and amplitude of ``N`` under periodic negative pulses.

    The first dose starts at t = 0 on the free cycle, one dose width before
    its minimum. ``Tp_grid`` defaults to 1, 1.1, ..., 40 days.
    """
    grid = np.round(np.linspace(1.0, 40.0, 391), 10) if Tp_grid is None else \
        np.asarray(Tp_grid, dtype=float)
    if np.any(grid < sigma_days):
        raise ValidationError("dosing period must be at least the dose width")
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 <= lo < hi:
        raise ValidationError("window must satisfy 0 <= lo < hi")
    horizon = hi if horizon_days is None else float(horizon_days)
    if horizon < hi:
        raise ValidationError("horizon must cover the window")
    p = model.params
    sigma = sigma_days * model.gamma_N
    if sigma > p.tau:
        raise ValidationError("dose width exceeds the delay")
    history = HistoryFunction.limit_cycle(p, end_phase=limit_cycle(p).period - sigma)
    a = chemo_amplitude(model)

    def point(tp):
        return _chemo_point(model, history, a, sigma, float(tp), (lo, hi), horizon)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(tp) for tp in grid]
    nadir = np.array([r[0] for r in rows])
    amp = np.array([r[1] for r in rows])
    return ScanResult(grid, nadir, amp, (lo, hi), a, model.period_days)


def healthy_model(phys: Optional[PhysioParams] = None, beta_U: float = 0.41,
                  beta_L: float = 0.225) -> NeutrophilModel:
    """Mapped delay and time scale with feedback levels giving a 0.22-0.85 band."""
    return map_neutrophil_model(phys or PhysioParams()).with_betas(beta_U, beta_L)
