"""Natural cubic spline through coefficient knots, with periodic extension."""
from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline


def dominant_period(times: np.ndarray, values: np.ndarray) -> float | None:
    """Period of the strongest oscillation, from the first autocorrelation peak.

    Returns ``None`` when the signal never decorrelates (no zero crossing).
    """
    x = np.asarray(values, dtype=float) - np.mean(values)
    n = x.size
    if n < 4 or not np.any(x):
        return None
    ac = np.correlate(x, x, mode="full")[n - 1:]
    ac /= ac[0]
    neg = np.nonzero(ac < 0)[0]
    if neg.size == 0:
        return None
    start = neg[0]
    if start + 1 >= n:
        return None
    k = start + int(np.argmax(ac[start:]))
    if k <= 0 or k >= n - 1:
        return None
    # parabolic refinement of the peak lag
    y0, y1, y2 = ac[k - 1], ac[k], ac[k + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    dt = times[1] - times[0]
    return float((k + shift) * dt)


class KnotSpline:
    """Natural cubic spline through ``(times, values)``.

    Queries outside the knot range are wrapped back into the last (or
    first) detected period of the signal; :meth:`extrapolated` reports
    whether a query needed that wrap.
    """

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.size == 0:
            raise ValueError("spline needs at least one knot")
        self.times, self.values = times, values
        if times.size == 1:
            self._spline = None
        elif times.size == 2:
            self._spline = CubicSpline(times, values, bc_type="not-a-knot")
        else:
            self._spline = CubicSpline(times, values, bc_type="natural")
        span = float(times[-1] - times[0])
        period = dominant_period(times, values) if times.size > 3 else None
        self.period = period if period and period <= span else (span if span > 0 else None)

    def wrap(self, t):
        t = np.asarray(t, dtype=float)
        t0, t1 = self.times[0], self.times[-1]
        if self.period is None:
            return np.clip(t, t0, t1)
        p = self.period
        hi = t1 - p + np.mod(t - (t1 - p), p)
        lo = t0 + np.mod(t - t0, p)
        return np.where(t > t1, hi, np.where(t < t0, lo, t))

    def extrapolated(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t < self.times[0]) | (t > self.times[-1])

    def __call__(self, t):
        if self._spline is None:
            return np.full(np.shape(t), self.values[0]) if np.ndim(t) else float(self.values[0])
        out = self._spline(self.wrap(t))
        return float(out) if np.ndim(out) == 0 else out
