"""Event-driven propagation kernel.

Between breaking points the solution is ``A + B*exp(-(t - t0))`` with ``A`` the
current feedback level plus the pulse amplitude, so the whole solve is a loop
over breaking points. Everything here sticks to scalars and flat arrays so the
same source runs under numba and as plain Python.
"""
import math

import numpy as np

from ._accel import kernel

OK = 0
CAPACITY = 1
STALL = 2

STALL_LIMIT = 1_000_000
UNBOUNDED = 2**62


@kernel
def _start_sign(v, a):
    # sign of x just after a segment start; x == 0 counts as non-negative
    if v > 0.0 or (v == 0.0 and a >= 0.0):
        return 1
    return -1


@kernel
def _end_sign(v, b):
    # sign of x just before a segment end at value v
    if v > 0.0 or (v == 0.0 and b >= 0.0):
        return 1
    return -1


@kernel
def _onset(n, delta0, period):
    if n == 0:
        return delta0
    return delta0 + n * period


@kernel
def propagate(tau, beta_u, beta_l, h_a, h_b, h_t0, h_t1,
              delta0, sigma, period, amp, n_pulses, t_end, cap):
    """Propagate from the history on [-tau, 0] to ``t_end``.

    Returns ``(seg, zt, zd, n_seg, n_zero, status)`` where ``seg`` has rows
    (A, B, t0, t1, feedback, pulse) and ``zd`` holds +1 for rising and -1 for
    falling zeros. History zeros are included in ``zt``.
    """
    merge = 1e-13 * tau
    seg = np.empty((cap, 6))
    zt = np.empty(cap)
    zd = np.empty(cap, dtype=np.int8)
    sw_t = np.empty(cap)
    sw_f = np.empty(cap)
    ns = 0
    nz = 0
    nsw = 0
    head = 0

    # feedback at 0+ follows the sign of x just after -tau
    prev = _start_sign(h_a[0] + h_b[0], h_a[0])
    f = -beta_u if prev > 0 else beta_l
    for k in range(h_a.shape[0]):
        a_k = h_a[k]
        b_k = h_b[k]
        s0 = _start_sign(a_k + b_k, a_k)
        if k > 0 and s0 != prev:
            if nz >= cap:
                return seg, zt, zd, ns, nz, CAPACITY
            zt[nz] = h_t0[k]
            zd[nz] = s0
            nz += 1
            sw_t[nsw] = h_t0[k] + tau
            sw_f[nsw] = -beta_u if s0 > 0 else beta_l
            nsw += 1
        v1 = a_k + b_k * math.exp(-(h_t1[k] - h_t0[k]))
        s1 = _end_sign(v1, b_k)
        if s1 != s0:
            z = h_t0[k] + math.log(-b_k / a_k)
            z = min(max(z, h_t0[k]), h_t1[k])
            if nz >= cap:
                return seg, zt, zd, ns, nz, CAPACITY
            zt[nz] = z
            zd[nz] = s1
            nz += 1
            sw_t[nsw] = z + tau
            sw_f[nsw] = -beta_u if s1 > 0 else beta_l
            nsw += 1
        prev = s1
    last = h_a.shape[0] - 1
    x = h_a[last] + h_b[last] * math.exp(-(h_t1[last] - h_t0[last]))

    # pulse bookkeeping: skip pulses that ended before t = 0
    n = 0
    if period < math.inf and delta0 + sigma < 0.0:
        n = int((-(delta0 + sigma)) // period)
    while n < n_pulses and _onset(n, delta0, period) + sigma <= merge:
        n += 1
    on = False
    next_edge = math.inf
    if n < n_pulses:
        start = _onset(n, delta0, period)
        if start <= merge:
            on = True
            next_edge = start + sigma
        else:
            next_edge = start

    t = 0.0
    stall = 0
    while t < t_end:
        t_next = t_end
        if next_edge < t_next:
            t_next = next_edge
        if head < nsw and sw_t[head] < t_next:
            t_next = sw_t[head]
        a_s = f + amp if on else f
        b_s = x - a_s
        s0 = _start_sign(x, a_s)
        if s0 != prev:
            if nz >= cap or nsw >= cap:
                return seg, zt, zd, ns, nz, CAPACITY
            zt[nz] = t
            zd[nz] = s0
            nz += 1
            sw_t[nsw] = t + tau
            sw_f[nsw] = -beta_u if s0 > 0 else beta_l
            nsw += 1
            if t + tau < t_next:
                t_next = t + tau
        v1 = a_s + b_s * math.exp(-(t_next - t))
        s1 = _end_sign(v1, b_s)
        if s1 != s0:
            z = t + math.log(-b_s / a_s)
            z = min(max(z, t), t_next)
            if nz >= cap or nsw >= cap:
                return seg, zt, zd, ns, nz, CAPACITY
            zt[nz] = z
            zd[nz] = s1
            nz += 1
            sw_t[nsw] = z + tau
            sw_f[nsw] = -beta_u if s1 > 0 else beta_l
            nsw += 1
            if z + tau < t_next:
                # the delayed switch from this zero lands inside the segment
                t_next = z + tau
                v1 = a_s + b_s * math.exp(-(t_next - t))
        if ns >= cap:
            return seg, zt, zd, ns, nz, CAPACITY
        seg[ns, 0] = a_s
        seg[ns, 1] = b_s
        seg[ns, 2] = t
        seg[ns, 3] = t_next
        seg[ns, 4] = f
        seg[ns, 5] = amp if on else 0.0
        ns += 1
        prev = s1
        if t_next - t < merge:
            stall += 1
            if stall > STALL_LIMIT:
                return seg, zt, zd, ns, nz, STALL
        x = v1
        t = t_next
        while head < nsw and sw_t[head] <= t + merge:
            f = sw_f[head]
            head += 1
        while next_edge <= t + merge:
            if on:
                on = False
                n += 1
                next_edge = _onset(n, delta0, period) if n < n_pulses else math.inf
            else:
                on = True
                next_edge = _onset(n, delta0, period) + sigma
    return seg, zt, zd, ns, nz, OK


@kernel
def breakpoint_extrema(seg_b, first):
    """Indices ``k`` (segment starts) where the slope sign flips.

    Slope on a segment is ``-B``; flat pieces inherit the previous sign.
    Returns (index array, kind array) with kind +1 for maxima, -1 for minima.
    """
    n = seg_b.shape[0]
    idx = np.empty(n, dtype=np.int64)
    kind = np.empty(n, dtype=np.int8)
    m = 0
    prev = 0
    for k in range(n):
        b = seg_b[k]
        s = 0
        if b < 0.0:
            s = 1
        elif b > 0.0:
            s = -1
        if s == 0:
            continue
        if k >= first and prev != 0 and s != prev:
            idx[m] = k
            kind[m] = 1 if prev > 0 else -1
            m += 1
        prev = s
    return idx[:m], kind[:m]
