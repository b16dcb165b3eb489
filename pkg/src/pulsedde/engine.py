"""Exact event-driven solver for the pulse-forced relay equation.

    x'(t) = -x(t) + f(x(t - tau)) + p(t)

``p`` is a train of rectangular pulses of height ``a`` and width ``sigma``
separated by rest intervals ``alpha``. Every piece of the solution between two
breaking points (pulse edges and delayed threshold crossings) has the form
``A + B*exp(-(t - t0))``, so the solve is bookkeeping plus closed-form zeros.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import EventStall, OutOfRange, ValidationError
from .model import ModelParams, cycle_segments, limit_cycle


@dataclass(frozen=True)
class ForcingSchedule:
    """Rectangular pulse train.

    Pulse ``n`` is on over ``[delta0 + n*T_p, delta0 + n*T_p + sigma]`` with
    ``T_p = sigma + alpha``. ``alpha = inf`` means a single pulse.
    ``pulse_count=None`` leaves the train unbounded. A negative ``delta0`` is
    allowed so a train can be continued from an earlier solve.
    """

    delta0: float = 0.0
    sigma: float = 1.0
    alpha: float = math.inf
    amplitude: float = 0.0
    pulse_count: Optional[int] = None

    def __post_init__(self):
        for name in ("delta0", "amplitude"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if math.isnan(self.alpha) or self.alpha < 0.0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        count = self.pulse_count
        if math.isinf(self.alpha):
            if count is None:
                count = 1
            if count > 1:
                raise ValidationError("an infinite rest interval allows one pulse only")
        if count is not None and count < 0:
            raise ValidationError("pulse_count must be >= 0")
        object.__setattr__(self, "pulse_count", count)

    @classmethod
    def single(cls, delta: float, sigma: float, amplitude: float) -> "ForcingSchedule":
        return cls(delta0=delta, sigma=sigma, alpha=math.inf, amplitude=amplitude,
                   pulse_count=1)

    @classmethod
    def periodic(cls, delta0: float, sigma: float, alpha: float, amplitude: float,
                 pulse_count: Optional[int] = None) -> "ForcingSchedule":
        return cls(delta0=delta0, sigma=sigma, alpha=alpha, amplitude=amplitude,
                   pulse_count=pulse_count)

    @classmethod
    def off(cls) -> "ForcingSchedule":
        return cls(amplitude=0.0, pulse_count=0)

    @property
    def period(self) -> float:
        return self.sigma + self.alpha

    @property
    def is_single(self) -> bool:
        return self.pulse_count == 1

    def onset(self, n: int) -> float:
        return self.delta0 if n == 0 else self.delta0 + n * self.period

    def value(self, t):
        """Forcing ``p(t)``; pulse edges count as on."""
        t = np.asarray(t, dtype=float)
        if self.pulse_count == 0:
            return np.zeros_like(t)
        if math.isinf(self.period):
            on = (t >= self.delta0) & (t <= self.delta0 + self.sigma)
        else:
            k = np.floor((t - self.delta0) / self.period)
            on = (t - (self.delta0 + k * self.period)) <= self.sigma
            on &= k >= 0
            if self.pulse_count is not None:
                on &= k < self.pulse_count
        return np.where(on, self.amplitude, 0.0)

    def shifted(self, origin: float) -> "ForcingSchedule":
        """The same train seen from a clock restarted at ``origin``."""
        if self.pulse_count == 0 or math.isinf(self.period):
            return replace(self, delta0=self.delta0 - origin)
        done = max(0, math.floor((origin - self.delta0) / self.period))
        count = None if self.pulse_count is None else max(self.pulse_count - done, 0)
        return replace(self, delta0=self.onset(done) - origin, pulse_count=count)


def _segment_values(a, b, t0, t):
    return a + b * np.exp(-(t - t0))


@dataclass(frozen=True, eq=False)
class HistoryFunction:
    """Initial function on ``[-tau, 0]`` stored as exponential pieces."""

    a: np.ndarray
    b: np.ndarray
    t0: np.ndarray
    t1: np.ndarray

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(v, dtype=float)).copy() for v in
                  (self.a, self.b, self.t0, self.t1)]
        if len({arr.shape for arr in arrays}) != 1 or arrays[0].ndim != 1 or arrays[0].size == 0:
            raise ValidationError("history needs equal-length, non-empty 1-D arrays")
        a, b, t0, t1 = arrays
        if not np.all(np.isfinite(np.concatenate(arrays))):
            raise ValidationError("history contains non-finite values")
        if t0[0] >= 0.0 or abs(t1[-1]) > 1e-12 * abs(t0[0]):
            raise ValidationError("history must span [-tau, 0]")
        if np.any(t1 <= t0):
            raise ValidationError("history segments must have positive length")
        if np.any(np.abs(t1[:-1] - t0[1:]) > 1e-12 * abs(t0[0])):
            raise ValidationError("history segments must be contiguous")
        end_vals = _segment_values(a[:-1], b[:-1], t0[:-1], t1[:-1])
        start_vals = a[1:] + b[1:]
        scale = max(1.0, float(np.max(np.abs(a + b))))
        if np.any(np.abs(end_vals - start_vals) > 1e-12 * scale):
            raise ValidationError("history must be continuous at segment joints")
        t1[-1] = 0.0
        for name, arr in zip(("a", "b", "t0", "t1"), (a, b, t0, t1)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def tau(self) -> float:
        return -float(self.t0[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, self.a.size - 1)
        return _segment_values(self.a[k], self.b[k], self.t0[k], t)

    @classmethod
    def constant(cls, value: float, tau: float) -> "HistoryFunction":
        return cls([value], [0.0], [-tau], [0.0])

    @classmethod
    def limit_cycle(cls, p: ModelParams, end_phase: float = 0.0) -> "HistoryFunction":
        """Unperturbed orbit on ``[end_phase - tau, end_phase]`` moved to ``[-tau, 0]``.

        ``end_phase = 0`` puts t = 0 at the cycle minimum, so pulse onsets are
        measured in cycle phase.
        """
        lc = limit_cycle(p)
        a, b, t0, t1 = cycle_segments(lc, p, end_phase - p.tau, end_phase)
        t0 = t0 - end_phase
        t1 = t1 - end_phase
        t0[0] = -p.tau
        t1[-1] = 0.0
        return cls(a, b, t0, t1)

    @classmethod
    def from_trajectory(cls, traj: "Trajectory", t_at: float, tau: float) -> "HistoryFunction":
        """Last ``tau`` time units of ``traj`` before ``t_at``, moved to ``[-tau, 0]``."""
        a, b, t0, t1 = traj.window(t_at - tau, t_at)
        t0 = t0 - t_at
        t1 = t1 - t_at
        t0[0] = -tau
        t1[-1] = 0.0
        return cls(a, b, t0, t1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Exact piecewise-exponential solution.

    Segments are stored as parallel arrays; the first ``n_history`` rows are the
    history on ``[-tau, 0]``. ``feedback`` and ``pulse`` hold the relay level and
    forcing value used on each solution segment (NaN on history rows).
    Zeros carry direction +1 (rising) or -1 (falling).
    """

    a: np.ndarray
    b: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    feedback: np.ndarray
    pulse: np.ndarray
    zeros: np.ndarray
    directions: np.ndarray
    n_history: int
    tau: float
    meta: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return float(self.t1[-1])

    @property
    def t_start(self) -> float:
        return float(self.t0[0])

    @property
    def breaking_points(self) -> np.ndarray:
        """Interior segment joints of the solution part (t > 0)."""
        return self.t0[self.n_history + 1:]

    def _check_span(self, lo: float, hi: float):
        slack = 1e-12 * max(1.0, abs(self.t_end))
        if lo < self.t_start - slack or hi > self.t_end + slack:
            raise OutOfRange(f"[{lo}, {hi}] outside trajectory span "
                             f"[{self.t_start}, {self.t_end}]")

    def segment_index(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, self.a.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.size:
            self._check_span(float(np.min(t)), float(np.max(t)))
        k = self.segment_index(t)
        out = _segment_values(self.a[k], self.b[k], self.t0[k], t)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        k = self.segment_index(t)
        return -self.b[k] * np.exp(-(t - self.t0[k]))

    def end_values(self) -> np.ndarray:
        return _segment_values(self.a, self.b, self.t0, self.t1)

    def zeros_between(self, t_lo: float, t_hi: float):
        """Zeros in ``[t_lo, t_hi]`` as ``(times, directions)``."""
        self._check_span(t_lo, t_hi)
        mask = (self.zeros >= t_lo) & (self.zeros <= t_hi)
        return self.zeros[mask], self.directions[mask]

    def window(self, t_lo: float, t_hi: float):
        """Segments restricted to ``[t_lo, t_hi]`` with offsets re-based."""
        self._check_span(t_lo, t_hi)
        first = int(self.segment_index(t_lo))
        last = int(np.searchsorted(self.t0, t_hi, side="left") - 1)
        last = max(last, first)
        sl = slice(first, last + 1)
        a = self.a[sl].copy()
        t0 = self.t0[sl].copy()
        t1 = self.t1[sl].copy()
        b = self.b[sl].copy()
        b[0] *= math.exp(-(t_lo - t0[0]))
        t0[0] = t_lo
        t1[-1] = t_hi
        return a, b, t0, t1

    def extrema(self, t_lo: float, t_hi: float):
        """Local extrema in ``[t_lo, t_hi]`` as ``(times, values, kinds)``.

        Each piece is monotone, so extrema sit at joints where the slope sign
        ``-B`` flips; kind is +1 for a maximum and -1 for a minimum.
        """
        self._check_span(t_lo, t_hi)
        idx, kind = _kernels.breakpoint_extrema(np.ascontiguousarray(self.b), self.n_history)
        times = self.t0[idx]
        mask = (times >= t_lo) & (times <= t_hi)
        idx = idx[mask]
        return self.t0[idx], self.a[idx] + self.b[idx], kind[mask]

    def dense(self, t_lo: float, t_hi: float, per_segment: int = 8):
        """Samples including every breaking point.

        Returns ``(t, x, segment_index, is_breaking_point)``.
        """
        self._check_span(t_lo, t_hi)
        a, b, t0, t1 = self.window(t_lo, t_hi)
        first = int(self.segment_index(t_lo))
        frac = np.arange(per_segment) / per_segment
        t = (t0[:, None] + (t1 - t0)[:, None] * frac[None, :]).ravel()
        seg = np.repeat(np.arange(first, first + a.size), per_segment)
        bp = np.zeros(t.size, dtype=bool)
        bp[::per_segment] = np.isin(t0, self.breaking_points)
        t = np.append(t, t_hi)
        seg = np.append(seg, first + a.size - 1)
        bp = np.append(bp, False)
        x = _segment_values(self.a[seg], self.b[seg], self.t0[seg], t)
        return t, x, seg, bp

    # serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "n_history": self.n_history,
            "segments": np.column_stack([self.a, self.b, self.t0, self.t1,
                                         self.feedback, self.pulse]).tolist(),
            "zeros": self.zeros.tolist(),
            "directions": self.directions.astype(int).tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        seg = np.asarray(data["segments"], dtype=float).reshape(-1, 6)
        return cls(seg[:, 0].copy(), seg[:, 1].copy(), seg[:, 2].copy(), seg[:, 3].copy(),
                   seg[:, 4].copy(), seg[:, 5].copy(),
                   np.asarray(data["zeros"], dtype=float),
                   np.asarray(data["directions"], dtype=np.int8),
                   int(data["n_history"]), float(data["tau"]), dict(data.get("meta", {})))

    def to_json(self, path) -> None:
        # repr-precision floats make the round trip exact
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path) -> "Trajectory":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path, t_lo: Optional[float] = None, t_hi: Optional[float] = None,
               per_segment: int = 8, header: Optional[dict] = None) -> None:
        t_lo = self.t_start if t_lo is None else t_lo
        t_hi = self.t_end if t_hi is None else t_hi
        t, x, seg, bp = self.dense(t_lo, t_hi, per_segment)
        with open(path, "w", newline="") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}: {val}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "segment_index", "is_breaking_point"])
            for row in zip(t, x, seg, bp):
                writer.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), int(row[3])])


def _capacity(tau: float, forcing: ForcingSchedule, t_end: float) -> int:
    edges = 4.0
    if forcing.pulse_count != 0 and not math.isinf(forcing.period):
        edges = 2.0 * (t_end / forcing.period + 2.0)
    return int(min(2 * edges + 8.0 * (t_end / tau + 2.0) + 64, 5e7))


def solve(p: ModelParams, history: Optional[HistoryFunction] = None,
          forcing: Optional[ForcingSchedule] = None, t_end: float = 10.0) -> Trajectory:
    """Propagate the forced equation exactly from ``history`` up to ``t_end``.

    ``history`` defaults to the limit cycle ending at its minimum, so pulse
    times are cycle phases; ``forcing`` defaults to no pulses.
    """
    if not (math.isfinite(t_end) and t_end > 0.0):
        raise ValidationError(f"t_end must be finite and > 0, got {t_end}")
    history = HistoryFunction.limit_cycle(p) if history is None else history
    forcing = ForcingSchedule.off() if forcing is None else forcing
    if abs(history.tau - p.tau) > 1e-12 * p.tau:
        raise ValidationError(f"history spans {history.tau}, model delay is {p.tau}")
    if forcing.pulse_count != 0 and forcing.sigma > p.tau * (1 + 1e-12):
        raise ValidationError(f"pulse width sigma={forcing.sigma} exceeds delay tau={p.tau}")
    count = _kernels.UNBOUNDED if forcing.pulse_count is None else int(forcing.pulse_count)
    cap = _capacity(p.tau, forcing, t_end)
    while True:
        seg, zt, zd, ns, nz, status = _kernels.propagate(
            p.tau, p.beta_U, p.beta_L, history.a, history.b, history.t0, history.t1,
            float(forcing.delta0), float(forcing.sigma), float(forcing.period),
            float(forcing.amplitude), count, float(t_end), cap)
        if status == _kernels.CAPACITY:
            cap *= 2
            continue
        if status == _kernels.STALL:
            raise EventStall("breaking points stopped advancing")
        break
    nh = history.a.size
    nan = np.full(nh, np.nan)
    seg = seg[:ns]
    return Trajectory(
        a=np.concatenate([history.a, seg[:, 0]]),
        b=np.concatenate([history.b, seg[:, 1]]),
        t0=np.concatenate([history.t0, seg[:, 2]]),
        t1=np.concatenate([history.t1, seg[:, 3]]),
        feedback=np.concatenate([nan, seg[:, 4]]),
        pulse=np.concatenate([nan, seg[:, 5]]),
        zeros=zt[:nz].copy(),
        directions=zd[:nz].copy(),
        n_history=nh,
        tau=p.tau,
    )


def zeros_between(traj: Trajectory, t_lo: float, t_hi: float):
    return traj.zeros_between(t_lo, t_hi)


def residual_check(traj: Trajectory, p: ModelParams, forcing: ForcingSchedule,
                   samples: int = 3) -> float:
    """Largest ``|x' + x - f(x(t - tau)) - p(t)|`` over interior sample points.

    Each solution segment is probed at ``samples`` evenly spaced interior
    points using its own stored coefficients, while the delayed value is read
    back from the whole trajectory.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    sl = slice(traj.n_history, None)
    a, b, t0, t1 = traj.a[sl], traj.b[sl], traj.t0[sl], traj.t1[sl]
    # pieces shorter than the rounding of event times carry no information:
    # their delayed argument sits on a rounded zero whose sign is arbitrary
    keep = (t1 - t0) > 1e-12 * np.maximum(1.0, np.abs(t1))
    a, b, t0, t1 = a[keep], b[keep], t0[keep], t1[keep]
    frac = (np.arange(samples) + 0.5) / samples
    t = t0[:, None] + (t1 - t0)[:, None] * frac[None, :]
    decay = np.exp(-(t - t0[:, None]))
    x = a[:, None] + b[:, None] * decay
    dx = -b[:, None] * decay
    delayed = traj(t - traj.tau)
    res = dx + x - p.feedback(delayed) - forcing.value(t)
    return float(np.max(np.abs(res))) if res.size else 0.0


def continuity_defect(traj: Trajectory) -> float:
    """Largest jump between consecutive segments."""
    ends = traj.end_values()[:-1]
    starts = traj.a[1:] + traj.b[1:]
    return float(np.max(np.abs(ends - starts))) if ends.size else 0.0
