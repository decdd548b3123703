"""Differential and algebraic Riccati equations.

All matrices handled here are Gram forms ``Pi = W P`` of the Riccati
operator ``P`` (``W`` the state Gram matrix).  In that representation the
differential equation reads

    dPi/dt = A^T Pi + Pi A - Pi B (K^T K)^-1 B^T Pi + C^T C,

independently of the input Gram matrix, and ``Pi`` is symmetric.  When the
state weight is the identity ``Pi`` and ``P`` coincide.  Operator norms of
``P`` in the state norm equal spectral norms of ``L^-1 Pi L^-T`` where
``W = L L^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from ._fitting import inflation, loglinear_fit
from .errors import (InsufficientDecay, NewtonStalled, NonFiniteEncountered,
                     NotStabilizable, StepSizeTooLarge, ValidationError)

__all__ = [
    "RiccatiSolution",
    "DecayFit",
    "integrate_dre",
    "solve_are",
    "newton_kleinman",
    "are_residual",
    "fit_decay",
    "solve_riccati",
    "loewner_slack",
    "deviation_problem",
    "spectral_radius",
]

_MODULE = "riccati"


def spectral_radius(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(np.linalg.eigvals(a)))) if a.size else 0.0


def substeps_for(problem, dt, budget=1.0):
    """Internal steps per ``dt`` so that ``rho(A) * h <= budget``."""
    return max(1, math.ceil(spectral_radius(problem.a) * dt / budget - 1e-12))


class DecayFit(NamedTuple):
    M: float
    beta: float
    r_squared: float


def deviation_problem(problem, pi_ref):
    """Problem whose Riccati equation is the one satisfied by ``Pi - pi_ref``
    when ``pi_ref`` solves the ARE: ``A`` becomes the closed loop matrix and
    the output term vanishes."""
    acl = problem.a - problem.b @ (problem.gain_map @ pi_ref)
    return problem.replace(a=acl, c=np.zeros((1, problem.n)))


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Grid samples of the Riccati Gram matrix.

    Attributes
    ----------
    grid : (N+1,) array
    p_samples : (N+1, n, n) array
        ``W P(t_i)``.
    state_weight : (n, n) array
    p_min : (n, n) array or None
        Gram form of the minimal nonnegative ARE solution.
    are_residual : float or None
    decay_fit : DecayFit or None
    deviation : (N+1, n, n) array or None
        ``Pi(t_i) - Pi_min`` integrated directly, so accurate far below the
        roundoff level of ``p_samples``.
    """

    grid: np.ndarray
    p_samples: np.ndarray
    state_weight: np.ndarray
    p_min: Optional[np.ndarray] = None
    are_residual: Optional[float] = None
    decay_fit: Optional[DecayFit] = None
    deviation: Optional[np.ndarray] = None

    def operator(self, i):
        """The Riccati operator ``P(t_i) = W^-1 Pi(t_i)``."""
        return np.linalg.solve(self.state_weight, self.p_samples[i])

    def distance_to_min(self, ord=2):
        """``|P(t_i) - P_min|`` in the state operator norm for every sample."""
        if self.p_min is None:
            raise ValidationError("solution carries no p_min", module=_MODULE,
                                  operation="distance_to_min")
        dev = self.p_samples - self.p_min if self.deviation is None else self.deviation
        return _op_norms(self.state_weight, dev, ord)

    def norms(self, ord="fro"):
        return _op_norms(self.state_weight, self.p_samples, ord)


def _op_norms(weight, grams, ord=2):
    lw = np.linalg.cholesky(weight)
    grams = np.asarray(grams)
    single = grams.ndim == 2
    grams = grams[None] if single else grams
    # L^-1 X L^-T for every sample
    tmp = np.linalg.solve(lw, grams)
    sym = np.linalg.solve(lw, np.swapaxes(tmp, -1, -2))
    if ord == "fro":
        out = np.sqrt(np.sum(sym * sym, axis=(-2, -1)))
    else:
        out = np.abs(np.linalg.eigvalsh(0.5 * (sym + np.swapaxes(sym, -1, -2)))).max(axis=-1)
    return float(out[0]) if single else out


class _Dre:
    """Right-hand side of the Gram-form Riccati equation, optionally with a
    companion covector ``zeta' = A^T zeta - Pi S zeta``."""

    def __init__(self, problem):
        self.at = problem.a.T.copy()
        self.b = problem.b
        self.gmap = problem.gain_map
        self.q = problem.q_form

    def __call__(self, pi, zeta=None):
        x = self.b.T @ pi                   # B^T Pi
        g = self.gmap @ pi                  # (K^T K)^-1 B^T Pi
        m = self.at @ pi
        dpi = m + m.T - g.T @ x + self.q
        if zeta is None:
            return dpi, None
        return dpi, self.at @ zeta - x.T @ (self.gmap @ zeta)

    def step(self, pi, zeta, h):
        k1, l1 = self(pi, zeta)
        k2, l2 = self(pi + 0.5 * h * k1, None if zeta is None else zeta + 0.5 * h * l1)
        k3, l3 = self(pi + 0.5 * h * k2, None if zeta is None else zeta + 0.5 * h * l2)
        k4, l4 = self(pi + h * k3, None if zeta is None else zeta + h * l3)
        new = pi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        new = 0.5 * (new + new.T)
        if zeta is not None:
            zeta = zeta + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        return new, zeta


def march(problem, step, n_steps, pi0=None, zeta0=None, on_node=None,
          rtol=1e-7, check_every=16, operation="integrate_dre", relative=False):
    """Fixed-step RK4 march of the Riccati equation (and companion covector).

    ``on_node(j, pi, zeta)`` is called for ``j = 0, ..., n_steps``.  Every
    ``check_every`` steps the step is repeated as two half steps; if the
    Richardson estimate ``|full - halves| / 15`` exceeds
    ``rtol * (1 + |Pi|)`` (``rtol * |Pi|`` when ``relative``) the march
    aborts with :class:`StepSizeTooLarge`.  Returns the final ``(pi, zeta)``.
    """
    rhs = _Dre(problem)
    n = problem.n
    absolute = 0.0 if relative else 1.0
    pi = np.zeros((n, n)) if pi0 is None else np.array(pi0, dtype=float)
    zeta = None if zeta0 is None else np.array(zeta0, dtype=float)
    if on_node is not None:
        on_node(0, pi, zeta)
    for j in range(n_steps):
        new, new_zeta = rhs.step(pi, zeta, step)
        if check_every and j % check_every == 0:
            half, _ = rhs.step(pi, None, 0.5 * step)
            half, _ = rhs.step(half, None, 0.5 * step)
            est = np.abs(new - half).max() / 15.0
            if est > rtol * (absolute + np.abs(half).max()):
                raise StepSizeTooLarge(
                    f"Richardson estimate {est:.2e} at t={j * step:.4g} exceeds "
                    f"tolerance with step {step:.3g}", module=_MODULE, operation=operation)
        pi, zeta = new, new_zeta
        if not np.all(np.isfinite(pi)):
            raise NonFiniteEncountered(f"Riccati iterate overflowed at t={(j + 1) * step:.4g}",
                                       module=_MODULE, operation=operation)
        if on_node is not None:
            on_node(j + 1, pi, zeta)
    return pi, zeta


def integrate_dre(problem, horizon, p0=None, dt=1e-3, *, rtol=1e-7, budget=1.0,
                  record_every=1, reference=None):
    """Integrate the Riccati equation on ``[0, horizon]`` from ``p0`` (Gram form).

    The output grid has spacing ``dt * record_every``.  Internally each
    ``dt`` is split into enough RK4 steps to keep ``2 rho(A) h <= budget``.
    With ``reference`` (an ARE solution, Gram form) the difference
    ``Pi - reference`` is integrated instead and kept in ``deviation``;
    its Richardson check is then relative.
    """
    op = "integrate_dre"
    if not (dt > 0 and horizon > 0):
        raise ValidationError("horizon and dt must be positive", module=_MODULE, operation=op)
    n = problem.n
    if p0 is not None:
        p0 = np.asarray(p0, dtype=float)
        if p0.shape != (n, n):
            raise ValidationError(f"p0 must be {n}x{n}", module=_MODULE, operation=op)
        if np.abs(p0 - p0.T).max() > 1e-10 * max(1.0, np.abs(p0).max()):
            raise ValidationError("p0 must be symmetric", module=_MODULE, operation=op)
        if np.linalg.eigvalsh(0.5 * (p0 + p0.T))[0] < -1e-10 * max(1.0, np.abs(p0).max()):
            raise ValidationError("p0 must be positive semidefinite", module=_MODULE,
                                  operation=op)
    steps = int(round(horizon / dt))
    rate = spectral_radius(problem.a)
    target, start = problem, (np.zeros((n, n)) if p0 is None else p0)
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        target = deviation_problem(problem, reference)
        start = start - reference
        rate = max(rate, spectral_radius(target.a))
    sub = max(1, math.ceil(2.0 * rate * dt / budget - 1e-12))
    stride = sub * int(record_every)
    n_out = steps // int(record_every) + 1
    samples = np.empty((n_out, n, n))

    def keep(j, pi, _):
        if j % stride == 0:
            samples[j // stride] = pi

    march(target, dt / sub, steps * sub, start, on_node=keep, rtol=rtol, operation=op,
          relative=reference is not None)
    grid = dt * int(record_every) * np.arange(n_out)
    if reference is None:
        return RiccatiSolution(grid=grid, p_samples=samples, state_weight=problem.state_weight)
    return RiccatiSolution(grid=grid, p_samples=samples + reference,
                           state_weight=problem.state_weight, deviation=samples)


def are_residual(problem, pi):
    """Frobenius norm (in the state geometry) of the ARE residual at ``pi``."""
    x = problem.b.T @ pi
    m = problem.a.T @ pi
    res = m + m.T - x.T @ (problem.gain_map @ pi) + problem.q_form
    return _op_norms(problem.state_weight, res, "fro")


def _lyap_kron(a, rhs):
    """Solve ``a^T X + X a = rhs`` through its Kronecker-vectorized form."""
    n = a.shape[0]
    eye = np.eye(n)
    big = np.kron(eye, a.T) + np.kron(a.T, eye)
    x = np.linalg.solve(big, rhs.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (x + x.T)


def _hurwitz(a, margin=1e-9):
    return bool(np.max(np.linalg.eigvals(a).real) < -margin) if a.size else True


def newton_kleinman(problem, pi0, max_iter=60, stall=5):
    """Newton-Kleinman refinement of an ARE iterate.

    Returns ``(pi, history)`` where ``history`` lists the residual before
    each step and after the last one.
    """
    op = "solve_are"
    scale = 1.0 + _op_norms(problem.state_weight, problem.q_form, "fro")
    target = 1e-8 * scale
    pi = 0.5 * (pi0 + pi0.T)
    res = are_residual(problem, pi)
    history = [res]
    best, best_pi, flat = res, pi, 0
    for _ in range(max_iter):
        g = problem.gain_map @ pi
        acl = problem.a - problem.b @ g
        rhs = -(problem.q_form + g.T @ problem.r_form @ g)
        try:
            cand = _lyap_kron(acl, rhs)
        except np.linalg.LinAlgError as exc:
            raise NewtonStalled(f"singular Lyapunov operator: {exc}", module=_MODULE,
                                operation=op) from exc
        if not np.all(np.isfinite(cand)):
            raise NonFiniteEncountered("Newton iterate overflowed", module=_MODULE, operation=op)
        new_res = are_residual(problem, cand)
        history.append(new_res)
        # progress means contraction against the previous step; the first
        # Kleinman step from a poor warm start may overshoot before contracting
        flat = 0 if new_res < 0.5 * history[-2] else flat + 1
        if new_res < best:
            best, best_pi = new_res, cand
        pi = cand
        if best <= 1e-14 * scale or (best <= target and flat >= 1):
            break
        if flat >= stall:
            if best <= target:
                break
            raise NewtonStalled(f"residual stuck at {best:.3e} for {stall} iterations",
                                module=_MODULE, operation=op)
    if best > target:
        raise NewtonStalled(f"residual {best:.3e} above {target:.3e} after {max_iter} steps",
                            module=_MODULE, operation=op)
    return best_pi, history


def _warm_start(problem, tol=1e-3, max_time=None):
    """March the DRE from zero until successive samples differ by < ``tol``
    relative, and further until the closed loop is Hurwitz (when it can be)."""
    rho = spectral_radius(problem.a) + np.abs(problem.s_form).max() + 1.0
    step = min(0.01, 0.25 / rho)
    chunk = max(1, int(round(0.05 / step)))
    max_time = max_time or 2000.0
    pi = np.zeros((problem.n, problem.n))
    t, converged = 0.0, False
    while t < max_time:
        new, _ = march(problem, step, chunk, pi, rtol=np.inf, check_every=0,
                       operation="solve_are")
        t += chunk * step
        delta = np.abs(new - pi).max()
        pi = new
        if delta < tol * (1.0 + np.abs(pi).max()):
            converged = True
            acl = problem.a - problem.b @ (problem.gain_map @ pi)
            if _hurwitz(acl) or delta < 1e-12 * (1.0 + np.abs(pi).max()):
                break
        # Slow growth usually means an unstabilized mode; stretch the step.
        if t > 50 and not converged:
            step = min(step * 1.5, 0.25 / rho)
    return pi


def solve_are(problem, *, return_history=False, check_structure=True):
    """Minimal nonnegative solution of the algebraic Riccati equation.

    Returns ``(p_min, residual)`` (Gram form) or, with
    ``return_history=True``, ``(p_min, residual, history)``.
    """
    from .structural import hautus_detectable, hautus_stabilizable

    op = "solve_are"
    if check_structure and not hautus_stabilizable(problem):
        raise NotStabilizable("(A, B) fails the Hautus test", module=_MODULE, operation=op)
    pi0 = _warm_start(problem)
    pi, history = newton_kleinman(problem, pi0)
    if check_structure and hautus_detectable(problem):
        acl = problem.a - problem.b @ (problem.gain_map @ pi)
        if not _hurwitz(acl, 0.0):
            raise NewtonStalled("closed loop not Hurwitz at the ARE solution",
                                module=_MODULE, operation=op)
    res = are_residual(problem, pi)
    return (pi, res, history) if return_history else (pi, res)


def fit_decay(solution, *, upper_frac=0.5, lower=1e-10):
    """Fit ``|P(t) - P_min| <= M exp(-beta t)`` on the solution grid.

    The regression window keeps samples with distance in
    ``[lower, upper_frac * |P_min|]``; ``M`` is then inflated so that the
    envelope dominates every grid sample.
    """
    op = "fit_decay"
    dist = solution.distance_to_min()
    if np.count_nonzero(dist > 1e-12) < 10:
        raise InsufficientDecay("fewer than 10 samples above the 1e-12 floor",
                                module=_MODULE, operation=op)
    pmin_norm = _op_norms(solution.state_weight, solution.p_min, 2)
    mask = (dist >= lower) & (dist <= upper_frac * pmin_norm)
    if np.count_nonzero(mask) < 3:
        mask = dist > 1e-12
    fit = loglinear_fit(solution.grid[mask], dist[mask], floor=0.0)
    if not (np.isfinite(fit.rate) and fit.rate > 0):
        raise InsufficientDecay(f"fitted rate {fit.rate:.3g} is not positive",
                                module=_MODULE, operation=op)
    envelope = fit.scale * np.exp(-fit.rate * solution.grid)
    scale = fit.scale * inflation(dist, envelope)
    return DecayFit(float(scale), float(fit.rate), float(fit.r_squared))


def solve_riccati(problem, dt=None, horizon=None, *, floor=1e-28, max_horizon=400.0,
                  max_samples=4000):
    """DRE from zero, ARE solution and fitted decay in one call.

    The DRE is integrated in deviation form around ``P_min``, so the
    distance ``|P(t) - P_min|`` is resolved well below double-precision
    roundoff of ``P(t)`` itself.  Without an explicit ``horizon`` the run
    lasts until that distance is predicted to fall below ``floor`` relative
    to ``|P_min|`` (capped at ``max_horizon``); the decay fit uses every
    sample down to ``10 * floor * |P_min|``.
    """
    p_min, res = solve_are(problem)
    acl = problem.a - problem.b @ (problem.gain_map @ p_min)
    margin = -np.max(np.linalg.eigvals(acl).real)
    if horizon is None:
        horizon = min(max_horizon, max(1.0, -np.log(floor) / (2.0 * max(margin, 1e-3)) * 1.2))
    if dt is None:
        dt = min(1e-2, 0.1 / max(spectral_radius(problem.a), spectral_radius(acl), 1e-12),
                 horizon / 50.0)
        dt = horizon / math.ceil(horizon / dt)
    every = max(1, int(round(horizon / dt / max_samples)))
    horizon = dt * every * math.ceil(round(horizon / dt) / every)
    sol = integrate_dre(problem, horizon, dt=dt, record_every=every, reference=p_min)
    sol = replace(sol, p_min=p_min, are_residual=res)
    pmin_norm = _op_norms(problem.state_weight, p_min, 2)
    try:
        return replace(sol, decay_fit=fit_decay(sol, lower=10.0 * floor * pmin_norm))
    except InsufficientDecay:
        return sol


def loewner_slack(solution):
    """Smallest eigenvalue of ``P(t_{i+1}) - P(t_i)`` over consecutive samples."""
    src = solution.p_samples if solution.deviation is None else solution.deviation
    diffs = np.diff(src, axis=0)
    worst = np.inf
    for d in diffs:
        worst = min(worst, linalg.eigh(0.5 * (d + d.T), solution.state_weight,
                                       eigvals_only=True)[0])
    return float(worst)
