"""Log-linear envelope fits shared by the Riccati, probe and turnpike code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogLinearFit:
    """Least-squares fit ``log y = log(scale) - rate * s``.

    ``scale`` is the raw intercept; :func:`inflate` turns it into a
    certified envelope.
    """

    scale: float
    rate: float
    r_squared: float
    count: int


def loglinear_fit(s, y, floor=1e-12):
    """Fit ``log y`` against ``s`` using the samples with ``y > floor``."""
    s = np.asarray(s, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = np.isfinite(y) & (y > floor)
    s, logy = s[keep], np.log(y[keep])
    if s.size < 2 or np.ptp(s) == 0.0:
        return LogLinearFit(np.nan, np.nan, np.nan, int(s.size))
    slope, intercept = np.polyfit(s, logy, 1)
    resid = logy - (intercept + slope * s)
    total = np.sum((logy - logy.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / total if total > 0 else 1.0
    return LogLinearFit(float(np.exp(intercept)), float(-slope), float(r2), int(s.size))


def inflation(values, envelope):
    """Smallest factor ``c >= 1`` with ``values <= c * envelope`` pointwise."""
    values = np.asarray(values, dtype=float).ravel()
    envelope = np.asarray(envelope, dtype=float).ravel()
    pos = values > 0
    if not np.any(pos):
        return 1.0
    with np.errstate(divide="ignore", over="ignore"):
        ratio = values[pos] / envelope[pos]
    return float(max(1.0, np.max(ratio)))
