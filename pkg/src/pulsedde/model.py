"""Reduced relay-feedback model and its closed-form limit cycle.

The raw equation ``x' = -gamma x + f(x(t - tau_raw))`` with a two-level
production term is shifted by the threshold and rescaled in time, leaving

    x'(t) = -x(t) + f(x(t - tau)),  f = beta_L if x(t - tau) < 0 else -beta_U

which depends only on ``(tau, beta_U, beta_L)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonOscillatoryRegime, OutOfRange, ValidationError


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValidationError(f"{name} must be finite and > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class RawParams:
    """Parameters of the unscaled model.

    Attributes
    ----------
    gamma : float
        Decay rate.
    tau_raw : float
        Delay in raw time units.
    b_L, b_U : float
        Production rate below and above the threshold (``b_L > b_U > 0``).
    theta : float
        Switching threshold.
    """

    gamma: float
    tau_raw: float
    b_L: float
    b_U: float
    theta: float

    def __post_init__(self):
        for name in ("gamma", "tau_raw", "b_L", "b_U", "theta"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))
        if not self.b_L > self.b_U:
            raise ValidationError(f"need b_L > b_U, got b_L={self.b_L}, b_U={self.b_U}")
        if self.b_U == self.gamma * self.theta:
            raise ValidationError("b_U must differ from gamma*theta")


@dataclass(frozen=True)
class ModelParams:
    """Reduced parameters ``(tau, beta_U, beta_L)``, all strictly positive."""

    tau: float
    beta_U: float
    beta_L: float

    def __post_init__(self):
        for name in ("tau", "beta_U", "beta_L"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    def feedback(self, delayed):
        """Evaluate the relay nonlinearity; ``x == 0`` takes the lower branch."""
        delayed = np.asarray(delayed, dtype=float)
        return np.where(delayed < 0.0, self.beta_L, -self.beta_U)


def normalize_params(raw: RawParams) -> ModelParams:
    """Shift by the threshold and rescale time by the decay rate."""
    level = raw.gamma * raw.theta
    if raw.b_L <= level or raw.b_U >= level:
        raise NonOscillatoryRegime(
            f"need b_L > gamma*theta > b_U, got b_L={raw.b_L}, "
            f"gamma*theta={level}, b_U={raw.b_U}"
        )
    return ModelParams(
        tau=raw.gamma * raw.tau_raw,
        beta_U=raw.theta - raw.b_U / raw.gamma,
        beta_L=raw.b_L / raw.gamma - raw.theta,
    )


def denormalize_params(p: ModelParams, gamma: float, theta: float) -> RawParams:
    """Inverse of :func:`normalize_params` for a chosen ``gamma`` and ``theta``."""
    return RawParams(
        gamma=gamma,
        tau_raw=p.tau / gamma,
        b_L=gamma * (p.beta_L + theta),
        b_U=gamma * (theta - p.beta_U),
        theta=theta,
    )


@dataclass(frozen=True)
class LimitCycle:
    """Descriptors of the unperturbed periodic orbit started at its minimum."""

    x_min: float
    x_max: float
    z1: float
    z2: float
    period: float
    t_max: float

    def zero(self, j: int) -> float:
        """The ``j``-th positive zero (1-based): odd rising, even falling."""
        if j < 1:
            raise ValidationError("zero index starts at 1")
        base = self.z1 if j % 2 == 1 else self.z2
        return base + ((j - 1) // 2) * self.period


def limit_cycle(p: ModelParams) -> LimitCycle:
    decay = -math.expm1(-p.tau)  # 1 - e^{-tau}
    x_min = -p.beta_U * decay
    x_max = p.beta_L * decay
    z1 = math.log1p(-x_min / p.beta_L)
    z2 = z1 + p.tau + math.log1p(x_max / p.beta_U)
    return LimitCycle(x_min=x_min, x_max=x_max, z1=z1, z2=z2,
                      period=z2 + p.tau, t_max=z1 + p.tau)


def cycle_segments(lc: LimitCycle, p: ModelParams, t_lo: float, t_hi: float):
    """Exact piecewise form ``A + B*exp(-(t - t0))`` of the periodic orbit on
    ``[t_lo, t_hi]`` (any reals). Returns arrays ``(A, B, t0, t1)``."""
    if not t_hi > t_lo:
        raise ValidationError("need t_hi > t_lo")
    k_lo = math.floor(t_lo / lc.period) - 1
    k_hi = math.floor(t_hi / lc.period) + 1
    marks = []
    for k in range(k_lo, k_hi + 1):
        marks.append((k * lc.period, k, True))
        marks.append((k * lc.period + lc.t_max, k, False))
    a, b, t0, t1 = [], [], [], []
    for (start, k, rising), (stop, _, _) in zip(marks[:-1], marks[1:]):
        lo, hi = max(start, t_lo), min(stop, t_hi)
        if hi <= lo:
            continue
        if rising:
            a.append(p.beta_L)
            b.append((lc.x_min - p.beta_L) * math.exp(-(lo - k * lc.period)))
        else:
            a.append(-p.beta_U)
            b.append((lc.x_max + p.beta_U) * math.exp(-(lo - k * lc.period - lc.t_max)))
        t0.append(lo)
        t1.append(hi)
    return np.array(a), np.array(b), np.array(t0), np.array(t1)


def _branches(lc: LimitCycle, p: ModelParams, t):
    rising = p.beta_L + (lc.x_min - p.beta_L) * np.exp(-t)
    falling = -p.beta_U + (lc.x_max + p.beta_U) * np.exp(-(t - lc.t_max))
    return np.where(t <= lc.t_max, rising, falling)


def eval_unperturbed(lc: LimitCycle, p: ModelParams, t):
    """Value of the limit cycle at times in ``[0, period]``.

    ``t == t_max`` uses the rising branch; both branches agree there.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > lc.period) or np.any(~np.isfinite(arr)):
        raise OutOfRange(f"t must lie in [0, {lc.period}]")
    out = _branches(lc, p, arr)
    return float(out) if out.ndim == 0 else out


def eval_cycle(lc: LimitCycle, p: ModelParams, t):
    """Periodic extension of :func:`eval_unperturbed` to any real ``t``."""
    arr = np.mod(np.asarray(t, dtype=float), lc.period)
    out = _branches(lc, p, arr)
    return float(out) if out.ndim == 0 else out
