"""Analytic-versus-numeric oracle checks shared by the CLI and the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ForcingSchedule, continuity_defect, residual_check, solve
from .model import (ModelParams, RawParams, denormalize_params, eval_cycle, limit_cycle,
                    normalize_params)
from .periodic import forced_cycle, iterate_pulse_map
from .single_pulse import pulse_response
from .treatment import BandSpec, fit_band, min_rest_interval


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        # NaN compares false, so it fails
        return bool(self.value <= self.tol)


def _random_params(rng) -> ModelParams:
    return ModelParams(tau=float(rng.uniform(0.2, 3.0)), beta_U=float(rng.uniform(0.1, 3.0)),
                       beta_L=float(rng.uniform(0.1, 3.0)))


def _random_forcing(rng, p: ModelParams) -> ForcingSchedule:
    sigma = float(rng.uniform(0.05, 1.0)) * p.tau
    return ForcingSchedule.periodic(float(rng.uniform(0.0, 3.0)), sigma,
                                    float(rng.uniform(0.0, 2.0)), float(rng.uniform(-3.0, 3.0)))


def check_unit_cycle() -> list:
    lc = limit_cycle(ModelParams(1.0, 1.0, 1.0))
    return [
        Check("unit cycle period = 2.97976", abs(lc.period - 2.97976), 5e-6),
        Check("unit cycle z1 = 0.48988", abs(lc.z1 - 0.48988), 5e-6),
        Check("unit cycle z2 = 1.97976", abs(lc.z2 - 1.97976), 5e-6),
    ]


def check_free_cycle(draws: int, rng) -> list:
    """Unforced solves reproduce the closed-form cycle and its zeros."""
    worst_x = worst_z = 0.0
    for _ in range(draws):
        p = _random_params(rng)
        lc = limit_cycle(p)
        traj = solve(p, None, None, 6.0 * lc.period)
        t = np.linspace(0.0, traj.t_end, 2001)
        worst_x = max(worst_x, float(np.max(np.abs(traj(t) - eval_cycle(lc, p, t)))))
        zs = traj.zeros[traj.zeros > 0.0]
        ref = np.array([lc.zero(j) for j in range(1, zs.size + 1)])
        worst_z = max(worst_z, float(np.max(np.abs(zs - ref))) if zs.size else 0.0)
    return [Check("free solve matches closed-form cycle", worst_x, 1e-12),
            Check("free solve zeros match closed-form zeros", worst_z, 1e-11)]


def check_residuals(draws: int, rng) -> list:
    """Forced solves satisfy the equation piecewise and stay continuous."""
    res = cont = 0.0
    for _ in range(draws):
        p = _random_params(rng)
        forcing = _random_forcing(rng, p)
        traj = solve(p, None, forcing, 40.0)
        res = max(res, residual_check(traj, p, forcing))
        cont = max(cont, continuity_defect(traj))
    return [Check("forced solve residual", res, 1e-10),
            Check("forced solve continuity", cont, 1e-12)]


def check_round_trip(draws: int, rng) -> list:
    worst = 0.0
    for _ in range(draws):
        p = _random_params(rng)
        gamma = float(rng.uniform(0.5, 3.0))
        theta = p.beta_U + float(rng.uniform(0.1, 3.0))   # keeps b_U > 0
        q = normalize_params(denormalize_params(p, gamma, theta))
        worst = max(worst, abs(q.tau - p.tau), abs(q.beta_U - p.beta_U), abs(q.beta_L - p.beta_L))
    raw = RawParams(gamma=2.0, tau_raw=0.5, b_L=6.0, b_U=1.0, theta=1.5)
    p = normalize_params(raw)
    back = denormalize_params(p, raw.gamma, raw.theta)
    worst = max(worst, abs(back.b_L - raw.b_L), abs(back.b_U - raw.b_U))
    return [Check("raw/reduced parameter round trip", worst, 1e-12)]


def check_forced_cycle() -> list:
    p = ModelParams(1.0, 0.7, 1.4)
    lc = limit_cycle(p)
    forcing = ForcingSchedule.periodic(lc.z2, 0.6, 0.3, 3.0)
    closed = iterate_pulse_map(p, forcing, 40, "closed")
    simulated = iterate_pulse_map(p, forcing, 40, "simulated")
    gap = max(float(np.max(np.abs(closed.at_onset - simulated.at_onset))),
              float(np.max(np.abs(closed.at_offset - simulated.at_offset))))
    fc = forced_cycle(p, 0.6, 0.3, 3.0)
    tail = max(abs(closed.at_onset[-1] - fc.x_min_p), abs(closed.at_offset[-1] - fc.x_max_p))
    at_a1 = forced_cycle(p, 0.6, 0.3, fc.a1).x_min_p
    return [Check("pulse map closed form vs solver", gap, 1e-12),
            Check("pulse map converges to forced cycle", tail, 1e-12),
            Check("forced minimum is zero at threshold a1", abs(at_a1), 1e-12)]


def check_resetting(count: int = 200) -> list:
    """Per-case closed-form resetting times agree with phase matching."""
    p = ModelParams(1.0, 1.0, 1.0)
    lc = limit_cycle(p)
    worst = 0.0
    for delta in np.linspace(0.0, lc.period, count, endpoint=False):
        r = pulse_response(p, (float(delta), 0.5, 0.5), lc)
        if r.F_closed is not None:
            worst = max(worst, abs(r.F_closed - r.F_matched))
    return [Check("closed-form resetting time vs phase matching", worst, 1e-9)]


def check_dosing() -> list:
    p = ModelParams(1.0, 0.4, 1.4)
    fit = fit_band(p, BandSpec(0.4, 0.5, 1.5), 0.6)
    paper = max(abs(fit.a - 1.48655), abs(fit.alpha - 0.510826))
    alpha = min_rest_interval(1.5, 0.6, 0.6, 0.4)
    back = forced_cycle(p, 0.6, alpha, 1.5).x_min_p
    return [Check("band fit residual", fit.residual, 1e-10),
            Check("band fit reproduces (1.48655, 0.510826)", paper, 5e-6),
            Check("minimum rest interval round trip", abs(back - 0.6), 1e-12)]


def run_checks(seed: int = 0, draws: int = 30) -> list:
    rng = np.random.default_rng(seed)
    checks = []
    checks += check_unit_cycle()
    checks += check_free_cycle(draws, rng)
    checks += check_residuals(draws, rng)
    checks += check_round_trip(draws, rng)
    checks += check_forced_cycle()
    checks += check_resetting()
    checks += check_dosing()
    return checks
