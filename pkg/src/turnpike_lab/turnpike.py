"""Measurement of the exponential and integral turnpike properties.

For optimal pairs ``(x*, u*)`` the deviation

    dev(t) = |x*(t) - x_e| + |u*(t) - u_e|        (state and input norms)

is compared with the two-sided envelope ``M (exp(-w t) + exp(-w (T - t)))``.
Deviations are computed in shifted coordinates, so they are accurate far
below the size of ``x_e``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._fitting import inflation, loglinear_fit
from .errors import HypothesesFail, InsufficientDecay, ValidationError
from .lti_core import OcpInstance
from .ocp import feedback_batch, get_plan, modified_input_norms, probe_evolution_operators
from .structural import hautus_detectable, hautus_stabilizable

__all__ = [
    "TurnpikeRun",
    "TurnpikeReport",
    "analyze",
    "envelope_values",
    "required_inflation",
    "verify_modified_input_argument",
    "modified_input_study",
    "ModifiedInputTable",
    "operator_envelope",
    "OperatorEnvelope",
]

_MODULE = "turnpike"
DEV_FLOOR = 1e-12


def envelope_values(envelope, horizon, t):
    m, w = envelope
    t = np.asarray(t, dtype=float)
    return m * (np.exp(-w * t) + np.exp(-w * (horizon - t)))


@dataclass(frozen=True, eq=False)
class TurnpikeRun:
    """Deviations of every initial state for one horizon: arrays ``(N+1, S)``."""

    horizon: float
    grid: np.ndarray
    dev_x: np.ndarray
    dev_u: np.ndarray

    @property
    def dev(self):
        return self.dev_x + self.dev_u


@dataclass(frozen=True, eq=False)
class TurnpikeReport:
    """Envelope fit and turnpike diagnostics.

    ``mid_deviation`` and ``integral_averages`` hold the maximum over the
    initial states.  ``integral_averages`` rows are
    ``(T, a, b, state_average_deviation, input_average_deviation)``.
    ``envelope`` is ``(M, w)`` with ``M`` already inflated so the bound holds
    on every sample; ``fit_inflation`` is that inflation factor.
    """

    horizons: list
    mid_deviation: list
    envelope: Optional[tuple]
    integral_averages: list
    runs: list = field(repr=False, default_factory=list)
    fit_inflation: Optional[float] = None
    fit_r_squared: Optional[float] = None
    at_turnpike_everywhere: bool = False
    x_e: Optional[np.ndarray] = None
    u_e: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "horizons": list(self.horizons),
            "mid_deviation": list(self.mid_deviation),
            "envelope": None if self.envelope is None else
            {"M": self.envelope[0], "w": self.envelope[1]},
            "fit_inflation": self.fit_inflation,
            "fit_r_squared": self.fit_r_squared,
            "integral_averages": [
                {"T": r[0], "a": r[1], "b": r[2], "state": r[3], "input": r[4]}
                for r in self.integral_averages],
            "at_turnpike_everywhere": self.at_turnpike_everywhere,
        }


def required_inflation(envelope, runs):
    """Factor by which ``M`` must grow for the envelope to dominate ``runs``."""
    worst = 1.0
    for run in runs:
        env = envelope_values(envelope, run.horizon, run.grid)[:, None]
        worst = max(worst, inflation(run.dev, np.broadcast_to(env, run.dev.shape)))
    return worst


def _window_average(grid, values, horizon, a, b, weight_cho):
    lo, hi = a * horizon, b * horizon
    i0, i1 = np.searchsorted(grid, [lo - 1e-12, hi + 1e-12])
    i1 -= 1
    seg_t = grid[i0:i1 + 1]
    seg = values[i0:i1 + 1]
    avg = np.trapezoid(seg, seg_t, axis=0) / (hi - lo)
    return np.sqrt(np.sum((weight_cho.T @ avg) ** 2, axis=0))


def analyze(problem, x0_set, horizons, dt, windows=((0.25, 0.75),), *, fit=True,
            check_hypotheses=True):
    """Solve the optimal control problem for every ``(x0, T)`` and measure
    the turnpike behaviour.

    The envelope is fitted by regressing ``log dev`` on
    ``d = min(t, T - t)`` over the tails ``t <= T/3`` and ``t >= 2T/3`` of all
    runs pooled, ignoring deviations below 1e-12; ``M`` is then inflated so
    the envelope dominates every sample.
    """
    op = "analyze"
    if check_hypotheses:
        if not hautus_stabilizable(problem):
            raise HypothesesFail("(A, B) is not stabilizable", module=_MODULE, operation=op)
        if not hautus_detectable(problem):
            raise HypothesesFail("(A, C) is not detectable", module=_MODULE, operation=op)
    horizons = [float(t) for t in horizons]
    if not horizons:
        raise ValidationError("need at least one horizon", module=_MODULE, operation=op)
    for a, b in windows:
        if not (0.0 <= a < b <= 1.0):
            raise ValidationError(f"window ({a}, {b}) must satisfy 0 <= a < b <= 1",
                                  module=_MODULE, operation=op)
    x0s = np.array([np.asarray(x, dtype=float).reshape(-1) for x in x0_set]).T
    if x0s.shape[0] != problem.n:
        raise ValidationError(f"initial states must have length {problem.n}",
                              module=_MODULE, operation=op)
    plan = get_plan(problem, dt, max(horizons), pi_horizons=horizons)
    st = plan.steady
    lw, lr = problem.state_cho, problem.input_cho

    runs, mids, averages = [], [], []
    for horizon in horizons:
        xt, ut, _, _ = feedback_batch(plan, x0s, horizon, need_cost=False)
        grid = dt * np.arange(xt.shape[0])
        dev_x = np.sqrt(np.sum(np.einsum("ij,kis->kjs", lw, xt) ** 2, axis=1))
        dev_u = np.sqrt(np.sum(np.einsum("ij,kis->kjs", lr, ut) ** 2, axis=1))
        run = TurnpikeRun(horizon, grid, dev_x, dev_u)
        runs.append(run)
        mid = int(round(0.5 * horizon / dt))
        mids.append(float(run.dev[mid].max()))
        for a, b in windows:
            sx = _window_average(grid, xt, horizon, a, b, lw)
            su = _window_average(grid, ut, horizon, a, b, lr)
            averages.append((horizon, a, b, float(sx.max()), float(su.max())))

    everywhere = all(float(r.dev.max()) <= DEV_FLOOR for r in runs)
    envelope = infl = r2 = None
    if fit and not everywhere:
        d_all, y_all = [], []
        for run in runs:
            t = run.grid
            tails = (t <= run.horizon / 3.0) | (t >= 2.0 * run.horizon / 3.0)
            d = np.minimum(t, run.horizon - t)[tails]
            for s in range(run.dev.shape[1]):
                d_all.append(d)
                y_all.append(run.dev[tails, s])
        res = loglinear_fit(np.concatenate(d_all), np.concatenate(y_all), floor=DEV_FLOOR)
        if not (np.isfinite(res.rate) and res.rate > 0):
            raise InsufficientDecay(f"fitted turnpike rate {res.rate:.3g} is not positive",
                                    module=_MODULE, operation=op)
        infl = required_inflation((res.scale, res.rate), runs)
        envelope = (res.scale * infl, res.rate)
        r2 = res.r_squared
    return TurnpikeReport(horizons=horizons, mid_deviation=mids, envelope=envelope,
                          integral_averages=averages, runs=runs, fit_inflation=infl,
                          fit_r_squared=r2, at_turnpike_everywhere=everywhere,
                          x_e=st.x_e, u_e=st.u_e)


# Modified input -----------------------------------------------------------------

@dataclass(frozen=True)
class ModifiedInputTable:
    """Rows ``(T, T0, norm, bound)`` with the fitted ``norm <= M exp(-k (T - T0))``."""

    rows: list
    M: float
    k: float
    r_squared: float
    violations: int


def modified_input_study(problem, horizons, t0_fracs, dt):
    """``|u~*|_{L^2([0, T0])}`` for every ``T`` and ``T0 = frac * T``, with a
    pooled log-linear fit against ``T - T0``."""
    horizons = [float(t) for t in horizons]
    for frac in t0_fracs:
        if not 0.0 < frac < 1.0:
            raise ValidationError(f"fractions must lie in (0, 1), got {frac}",
                                  module=_MODULE, operation="verify_modified_input_argument")
    plan = get_plan(problem, dt, max(horizons), pi_horizons=horizons)
    raw = []
    for horizon in horizons:
        inst = OcpInstance(problem, horizon, np.zeros(problem.n), dt)
        t0s = [dt * round(frac * horizon / dt) for frac in t0_fracs]
        for t0, val in zip(t0s, modified_input_norms(inst, t0s, plan)):
            raw.append((horizon, t0, val))
    gaps = np.array([h - t0 for h, t0, _ in raw])
    vals = np.array([v for _, _, v in raw])
    if np.all(vals <= DEV_FLOOR):
        rows = [(h, t0, v, 0.0) for h, t0, v in raw]
        return ModifiedInputTable(rows, 0.0, np.inf, 1.0, 0)
    res = loglinear_fit(gaps, vals, floor=0.0)
    bound_raw = res.scale * np.exp(-res.rate * gaps)
    scale = res.scale * inflation(vals, bound_raw)
    bounds = scale * np.exp(-res.rate * gaps)
    rows = [(h, t0, v, float(bnd)) for (h, t0, v), bnd in zip(raw, bounds)]
    viol = int(np.sum(vals > bounds * (1 + 1e-12))) + int(not res.rate > 0)
    return ModifiedInputTable(rows, float(scale), float(res.rate), float(res.r_squared), viol)


def verify_modified_input_argument(instance, t0_fracs):
    """Single-horizon version of :func:`modified_input_study`."""
    return modified_input_study(instance.problem, [instance.horizon], t0_fracs, instance.dt)


# Evolution-operator envelopes ---------------------------------------------------

@dataclass(frozen=True)
class OperatorEnvelope:
    kind: str
    M: float
    k: float
    r_squared: float
    samples: np.ndarray


def operator_envelope(problem, horizons, dt, kind="forward", n_tau=4, n_t=8):
    """Sample ``|U_T(t, tau)|`` (or the adjoint family) over several horizons
    and fit a single ``M exp(-k (t - tau))`` dominating every sample."""
    plan = get_plan(problem, dt, max(horizons), pi_horizons=horizons)
    rows = []
    for horizon in horizons:
        inst = OcpInstance(problem, horizon, np.zeros(problem.n), dt)
        taus = [dt * round(f * horizon / dt) for f in np.linspace(0.0, 0.75, n_tau)]
        ts = [dt * round(f * horizon / dt) for f in np.linspace(0.0, 1.0, n_t + 1)]
        probe = probe_evolution_operators(inst, taus, ts, kind=kind, plan=plan)
        for tau, t, val in probe.samples:
            rows.append((horizon, tau, t, val))
    arr = np.array(rows)
    lag = arr[:, 2] - arr[:, 1]
    res = loglinear_fit(lag, arr[:, 3], floor=0.0)
    raw = res.scale * np.exp(-res.rate * lag)
    scale = res.scale * inflation(arr[:, 3], raw)
    return OperatorEnvelope(kind, float(scale), float(res.rate), float(res.r_squared), arr)
