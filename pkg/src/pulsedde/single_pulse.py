"""Response of the limit cycle to one rectangular pulse.

A pulse of height ``a`` and width ``sigma`` starting at cycle phase ``delta``
is labelled by four letters: rising/falling phase and negative/positive value
at the pulse start, then the same at the pulse end. The switching constants
below give the interval of onsets belonging to each label. After the pulse the
solution rejoins the cycle with a new phase; the resetting time ``F`` and the
cycle length ``T`` measure that return.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .engine import ForcingSchedule, Trajectory, solve
from .errors import InfiniteResetting, OutOfRange, Undefined, ValidationError
from .model import LimitCycle, ModelParams, eval_cycle, limit_cycle

MATCH_TOL = 1e-10
INF_TOL = 1e-12
MAX_DELAYS = 1000


class CaseLabel(str, Enum):
    RNRN = "RNRN"
    RNRP = "RNRP"
    RPRP = "RPRP"
    RPFP = "RPFP"
    RPFN = "RPFN"
    FPFP = "FPFP"
    FPFN = "FPFN"
    FNFP1 = "FNFP1"
    FNFP2 = "FNFP2"
    FNFP3 = "FNFP3"
    FNFP4 = "FNFP4"
    FNFN = "FNFN"
    FNRN = "FNRN"
    FNRP = "FNRP"


FNFP_FAMILY = frozenset({CaseLabel.FNFP1, CaseLabel.FNFP2, CaseLabel.FNFP3, CaseLabel.FNFP4})
DEEP_FNFP = frozenset({CaseLabel.FNFP2, CaseLabel.FNFP3, CaseLabel.FNFP4})

# index of the zero used as marker for the cycle length, per case
_MARKER = {
    CaseLabel.RNRN: 1,
    CaseLabel.RNRP: 2, CaseLabel.RPRP: 2, CaseLabel.RPFP: 2, CaseLabel.FPFP: 2,
    CaseLabel.RPFN: 3, CaseLabel.FPFN: 3, CaseLabel.FNFN: 3, CaseLabel.FNRN: 3,
    CaseLabel.FNFP1: 4, CaseLabel.FNRP: 4,
}


class Pulse(NamedTuple):
    delta: float
    sigma: float
    amplitude: float


def _as_pulse(pulse) -> Pulse:
    pulse = Pulse(*map(float, pulse))
    if not (pulse.sigma > 0.0 and math.isfinite(pulse.sigma)):
        raise ValidationError("sigma must be > 0")
    if not (pulse.amplitude > 0.0 and math.isfinite(pulse.amplitude)):
        raise ValidationError("pulse amplitude must be > 0")
    return pulse


@dataclass(frozen=True)
class DeltaConstants:
    """Onset phases at which the case of a pulse changes.

    A constant is ``None`` when its closed form does not exist; ``reasons``
    then names the violated condition.
    """

    delta1: Optional[float]
    delta2: Optional[float]
    delta4: Optional[float]
    delta4_hat: Optional[float]
    delta5: Optional[float]
    delta_inf: Optional[float]
    reasons: dict = field(default_factory=dict)

    def require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise Undefined(f"{name} undefined: {self.reasons.get(name, 'no closed form')}")
        return value

    @property
    def delta2_or_inf(self) -> float:
        # when the pulse can never end negative the switch never happens
        return math.inf if self.delta2 is None else self.delta2


def _log_ratio(num: float, den: float) -> Optional[float]:
    if num > 0.0 and den > 0.0:
        return math.log(num / den)
    return None


def delta_constants(p: ModelParams, sigma: float, a: float,
                    lc: Optional[LimitCycle] = None) -> DeltaConstants:
    _as_pulse((0.0, sigma, a))
    if sigma > p.tau * (1 + 1e-12):
        raise ValidationError("need sigma <= tau")
    lc = limit_cycle(p) if lc is None else lc
    bu, bl, tau = p.beta_U, p.beta_L, p.tau
    gain = -a * math.expm1(-sigma)          # a(1 - e^{-sigma})
    es1 = math.expm1(sigma)                 # e^{sigma} - 1
    decay = -math.expm1(-tau)               # 1 - e^{-tau}
    reasons = {}

    delta1 = lc.z1 - sigma - math.log1p(gain / bl)

    delta2 = None
    if bu > gain:
        delta2 = lc.z2 - sigma - math.log1p(-gain / bu)
    else:
        reasons["delta2"] = "needs beta_U > a(1 - e^-sigma)"

    delta4 = lc.z2 + math.log(bu * math.expm1(tau) / (a * es1))

    num = a * bl + bu * (a - bu) * decay
    den = a * (bl * math.exp(-lc.z2) + (a - bu) * es1 * math.exp(-lc.period))
    delta4_hat = _log_ratio(num, den)
    if delta4_hat is None:
        reasons["delta4_hat"] = "log argument not positive"

    num = bu * (bu + bl) + (bl + bu * (1.0 + decay)) * (a - bu)
    den = a * (bu + bl) - a * es1 * decay * (a - bu)
    ratio = _log_ratio(num, den)
    delta5 = None if ratio is None else lc.z2 + ratio
    if delta5 is None:
        reasons["delta5"] = "log argument not positive"

    delta_inf = None
    rest = a - bu * -math.expm1(-sigma)
    if rest > 0.0:
        delta_inf = lc.z2 + sigma + math.log(rest / a)
    else:
        reasons["delta_inf"] = "needs a > beta_U(1 - e^-sigma)"

    return DeltaConstants(delta1, delta2, delta4, delta4_hat, delta5, delta_inf, reasons)


@dataclass(frozen=True)
class CaseInterval:
    """Onset interval of one base case, with explicit endpoint closure."""

    label: str
    lo: float
    hi: float
    closed_lo: bool
    closed_hi: bool

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        above = x >= self.lo if self.closed_lo else x > self.lo
        below = x <= self.hi if self.closed_hi else x < self.hi
        return above & below

    @property
    def empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.closed_lo and self.closed_hi)

    def __and__(self, other: "CaseInterval") -> "CaseInterval":
        if self.lo > other.lo:
            lo, clo = self.lo, self.closed_lo
        elif other.lo > self.lo:
            lo, clo = other.lo, other.closed_lo
        else:
            lo, clo = self.lo, self.closed_lo and other.closed_lo
        if self.hi < other.hi:
            hi, chi = self.hi, self.closed_hi
        elif other.hi < self.hi:
            hi, chi = other.hi, other.closed_hi
        else:
            hi, chi = self.hi, self.closed_hi and other.closed_hi
        return CaseInterval(self.label, lo, hi, clo, chi)


def _iv(label, lo, hi, clo, chi):
    return CaseInterval(label, lo, hi, clo, chi)


def case_intervals(p: ModelParams, sigma: float, a: float,
                   lc: Optional[LimitCycle] = None,
                   dc: Optional[DeltaConstants] = None) -> tuple:
    """The eleven base intervals; together they partition ``[0, T~)``.

    The plain ``FNFP`` interval is refined by :func:`classify`.
    """
    lc = limit_cycle(p) if lc is None else lc
    dc = delta_constants(p, sigma, a, lc) if dc is None else dc
    inf = math.inf
    d1, d2 = dc.delta1, dc.delta2_or_inf
    tmax, z1, z2, per = lc.t_max, lc.z1, lc.z2, lc.period
    ends_p = _iv("", -inf, d2, False, True)       # pulse ends positive (R/F-P window)
    ends_n = _iv("", d2, inf, False, False)
    rnrp_lo = _iv("", d1, inf, False, False) if d1 >= 0.0 else _iv("", 0.0, inf, True, False)
    out = [
        _iv("RNRN", 0.0, d1, True, True),
        _iv("RNRP", -inf, z1, False, False) & rnrp_lo,
        _iv("RPRP", z1, tmax - sigma, True, True),
        _iv("RPFP", tmax - sigma, tmax, False, False) & ends_p,
        _iv("RPFN", tmax - sigma, tmax, False, False) & ends_n,
        _iv("FPFP", tmax, z2, True, True) & ends_p,
        _iv("FPFN", tmax, z2, True, True) & ends_n,
        _iv("FNFP", z2, per - sigma, False, False) & _iv("", -inf, d2, False, False),
        _iv("FNFN", z2, per - sigma, False, False) & _iv("", d2, inf, True, False),
        _iv("FNRN", per - sigma, per, True, False) & _iv("", -inf, per + d1, False, False),
        _iv("FNRP", per - sigma, per, True, False) & _iv("", per + d1, inf, True, False),
    ]
    return tuple(out)


def _refine_fnfp(delta: float, dc: DeltaConstants) -> CaseLabel:
    if delta >= dc.delta4:
        return CaseLabel.FNFP1
    if dc.delta4_hat is not None and delta < dc.delta4_hat:
        return CaseLabel.FNFP3
    if (dc.delta4_hat is not None and delta >= dc.delta4_hat
            and dc.delta5 is not None and delta < dc.delta5):
        return CaseLabel.FNFP4
    return CaseLabel.FNFP2


def classify(p: ModelParams, pulse, lc: Optional[LimitCycle] = None,
             dc: Optional[DeltaConstants] = None) -> CaseLabel:
    """Case label of a pulse ``(delta, sigma, a)`` with onset in ``[0, T~)``."""
    delta, sigma, a = _as_pulse(pulse)
    lc = limit_cycle(p) if lc is None else lc
    if not 0.0 <= delta < lc.period:
        raise OutOfRange(f"onset must lie in [0, {lc.period})")
    dc = delta_constants(p, sigma, a, lc) if dc is None else dc
    for iv in case_intervals(p, sigma, a, lc, dc):
        if iv.contains(delta):
            if iv.label == "FNFP":
                return _refine_fnfp(delta, dc)
            return CaseLabel(iv.label)
    raise RuntimeError(f"onset {delta} not covered by any case interval")


@dataclass(frozen=True)
class PulseResponse:
    """Outcome of a single pulse.

    ``F`` is the resetting time measured from the onset, ``T`` the length of
    the cycle containing the pulse and ``new_phase = T - T~`` the phase shift.
    ``depth`` counts rapid oscillations (zero pairs closer than ``tau``) made
    before the return; it is non-zero only in the deep FNFP cases.

    ``F_matched`` comes from matching the simulated tail against the shifted
    cycle, ``F_closed`` from the per-case closed form in the simulated zeros.
    ``F_stated`` keeps the textbook per-case value, which reads ``sigma`` for
    RPFP/FPFP and the perturbed maximum for FNRP/FNFP1 even when the return
    happens later.
    """

    case: CaseLabel
    F: float
    T: float
    new_phase: float
    perturbed_zeros: np.ndarray
    depth: int = 0
    F_matched: float = math.nan
    F_closed: Optional[float] = None
    F_stated: Optional[float] = None
    T_case: Optional[float] = None
    marker: int = 0
    return_time: float = math.nan


def _stated_f(case: CaseLabel, z, delta: float, sigma: float, tau: float,
              lc: LimitCycle) -> Optional[float]:
    """Resetting time by the per-case closed forms; z(k) is the k-th positive zero."""
    if case in (CaseLabel.RNRN, CaseLabel.RPFP, CaseLabel.FPFP, CaseLabel.FNRN):
        return sigma
    if case in (CaseLabel.RNRP, CaseLabel.RPRP):
        return lc.t_max + (z(2) - lc.z2) - delta
    if case in (CaseLabel.RPFN, CaseLabel.FPFN):
        return z(2) + tau - delta
    if case is CaseLabel.FNFP1:
        return z(3) + tau - delta
    if case is CaseLabel.FNFN:
        return lc.z2 + tau - delta
    if case is CaseLabel.FNRP:
        return lc.zero(3) + tau - (lc.zero(4) - z(4)) - delta
    return None


def _closed_f(case: CaseLabel, z, delta: float, sigma: float, tau: float,
              lc: LimitCycle) -> Optional[float]:
    # A pulse ending on the falling branch rejoins the shifted cycle only once
    # that cycle has passed its own maximum at t_max + (z(2) - z~2).
    if case in (CaseLabel.RPFP, CaseLabel.FPFP):
        return max(sigma, lc.t_max + (z(2) - lc.z2) - delta)
    # After a rise through z(3) both orbits fall under the same law, so they
    # meet at the later of the two maxima: the perturbed one at z(3) + tau,
    # or the shifted cycle's at z~3 + tau + (z(4) - z~4).
    if case in (CaseLabel.FNRP, CaseLabel.FNFP1):
        return max(z(3), lc.zero(3) + (z(4) - lc.zero(4))) + tau - delta
    return _stated_f(case, z, delta, sigma, tau, lc)


def _match_return(traj: Trajectory, p: ModelParams, lc: LimitCycle, delta: float,
                  tol: float) -> Optional[tuple]:
    """Phase shift ``s`` and return time ``t*`` with ``x(t) = x~(t - s)`` for
    ``t >= t*``, or None if the tail of ``traj`` is not yet on the cycle."""
    zs = traj.zeros[traj.zeros > 0.0]
    ds = traj.directions[traj.zeros > 0.0]
    if zs.size == 0:
        return None
    base = lc.z1 if ds[-1] > 0 else lc.z2
    s = float(zs[-1] - base)
    t_end = traj.t_end
    k_lo = math.floor((delta - s) / lc.period) - 1
    k_hi = math.ceil((t_end - s) / lc.period) + 1
    ks = np.arange(k_lo, k_hi + 1) * lc.period + s
    cyc = np.concatenate([ks, ks + lc.t_max])
    own = traj.t0[traj.n_history:]
    cand = np.unique(np.concatenate([own, cyc, [t_end]]))
    cand = cand[(cand >= delta) & (cand <= t_end)]
    diff = np.abs(traj(cand) - eval_cycle(lc, p, cand - s))
    bad = np.nonzero(diff > tol)[0]
    t_star = float(cand[0]) if bad.size == 0 else (
        float(cand[bad[-1] + 1]) if bad[-1] + 1 < cand.size else math.inf)
    if t_star > t_end - lc.period - p.tau:
        return None
    return s, t_star


def _rapid_pairs(zs, ds, lo: float, hi: float, tau: float) -> int:
    m = 0
    for k in range(zs.size - 1):
        if lo <= zs[k] <= hi and ds[k] > 0 and ds[k + 1] < 0 and zs[k + 1] - zs[k] < tau:
            m += 1
    return m


def pulse_response(p: ModelParams, pulse, lc: Optional[LimitCycle] = None,
                   dc: Optional[DeltaConstants] = None, tol: float = MATCH_TOL) -> PulseResponse:
    """Simulate one pulse and measure how the solution returns to the cycle."""
    delta, sigma, a = _as_pulse(pulse)
    lc = limit_cycle(p) if lc is None else lc
    dc = delta_constants(p, sigma, a, lc) if dc is None else dc
    case = classify(p, pulse, lc, dc)
    if dc.delta_inf is not None and abs(delta - dc.delta_inf) <= INF_TOL:
        raise InfiniteResetting(f"onset {delta} sits on the rapid cycle (delta_inf={dc.delta_inf})")

    forcing = ForcingSchedule.single(delta, sigma, a)
    horizon = delta + sigma + 3.0 * lc.period + p.tau
    limit = delta + sigma + MAX_DELAYS * p.tau + 2.0 * lc.period
    while True:
        traj = solve(p, None, forcing, horizon)
        found = _match_return(traj, p, lc, delta, tol)
        if found is not None:
            break
        if horizon >= limit:
            raise InfiniteResetting(
                f"no return to the cycle within {MAX_DELAYS} delays (onset {delta})")
        horizon = min(2.0 * horizon, limit)
    s, t_star = found

    pos = traj.zeros > 0.0
    zs, ds = traj.zeros[pos], traj.directions[pos]
    depth = _rapid_pairs(zs, ds, delta, t_star, p.tau)
    k = int(np.searchsorted(zs, t_star - 1e-12, side="left")) + 1
    T = lc.period + float(zs[k - 1]) - lc.zero(k - 2 * depth)

    def z(j: int) -> float:
        return float(zs[j - 1])

    f_closed = f_stated = None
    if case not in DEEP_FNFP:
        f_closed = _closed_f(case, z, delta, sigma, p.tau, lc)
        f_stated = _stated_f(case, z, delta, sigma, p.tau, lc)
    t_case = None
    if case in _MARKER:
        j = _MARKER[case]
        t_case = lc.period + z(j) - lc.zero(j)
    f_matched = t_star - delta
    return PulseResponse(
        case=case,
        F=f_matched if f_closed is None else f_closed,
        T=T if t_case is None else t_case,
        new_phase=(T if t_case is None else t_case) - lc.period,
        perturbed_zeros=zs,
        depth=depth,
        F_matched=f_matched,
        F_closed=f_closed,
        F_stated=f_stated,
        T_case=t_case,
        marker=k,
        return_time=t_star,
    )


@dataclass(frozen=True)
class ResponseCurve:
    deltas: np.ndarray
    labels: list
    F: np.ndarray
    T: np.ndarray
    depth: np.ndarray


def response_curve(p: ModelParams, sigma: float, a: float, deltas) -> ResponseCurve:
    """Resetting time and cycle length over a grid of onsets.

    Points hitting the rapid cycle exactly get ``inf``.
    """
    lc = limit_cycle(p)
    dc = delta_constants(p, sigma, a, lc)
    deltas = np.asarray(deltas, dtype=float)
    F = np.empty(deltas.size)
    T = np.empty(deltas.size)
    depth = np.zeros(deltas.size, dtype=int)
    labels = []
    for i, d in enumerate(deltas):
        try:
            r = pulse_response(p, (d, sigma, a), lc, dc)
        except InfiniteResetting:
            labels.append(classify(p, (d, sigma, a), lc, dc))
            F[i] = T[i] = math.inf
            continue
        labels.append(r.case)
        F[i], T[i], depth[i] = r.F, r.T, r.depth
    return ResponseCurve(deltas, labels, F, T, depth)


@dataclass(frozen=True)
class UnstableCycle:
    delta_inf: float
    period: float
    x_min: float
    x_max: float


def unstable_cycle(p: ModelParams, sigma: float, a: float) -> UnstableCycle:
    """Rapid periodic solution reached only from onset ``delta_inf``."""
    dc = delta_constants(p, sigma, a)
    d_inf = dc.require("delta_inf")
    lc = limit_cycle(p)
    return UnstableCycle(
        delta_inf=d_inf,
        period=lc.period - d_inf,
        x_min=p.beta_U * math.expm1(-(d_inf - lc.z2)),
        x_max=-a * math.expm1(-sigma) + p.beta_U * math.expm1(lc.z2 - d_inf - sigma),
    )


def _rapid_closure(p: ModelParams, lc: LimitCycle, sigma: float) -> float:
    # x(T~) - x(delta_inf): zero when the rapid orbit closes after one turn
    a = p.beta_L + p.beta_U
    d_inf = delta_constants(p, sigma, a, lc).delta_inf
    x0 = p.beta_U * math.expm1(lc.z2 - d_inf)
    x1 = p.beta_L + (x0 - p.beta_L) * math.exp(-sigma)
    return -p.beta_U + (x1 + p.beta_U) * math.exp(-(lc.period - d_inf - sigma)) - x0


def rapid_cycle_width(p: ModelParams, grid: int = 400) -> float:
    """Pulse width for which a pulse of height ``beta_L + beta_U`` at
    ``delta_inf`` lands exactly on a closed rapid orbit.

    For other widths the orbit started at ``delta_inf`` does not close and,
    being unstable, drifts away after the first oscillation.
    """
    lc = limit_cycle(p)
    widths = np.linspace(p.tau * 1e-6, p.tau, grid)
    vals = np.array([_rapid_closure(p, lc, w) for w in widths])
    hits = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if hits.size == 0:
        raise Undefined("no pulse width closes the rapid orbit")
    k = int(hits[0])
    return brentq(lambda w: _rapid_closure(p, lc, w), widths[k], widths[k + 1], xtol=1e-15)
