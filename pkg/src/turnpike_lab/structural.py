"""Stabilizability and detectability: Hautus rank tests, stabilizing gains
from Riccati equations, and sampled certificates for the constants in the
detectability and stabilizability estimates

    |x(T)|^2 <= M ( int_0^T |Cx|^2 + |u|^2 dt + |x0|^2 ),   x' = Ax + Bu,
    |p(T)|^2 <= M ( int_0^T |B*p|^2 + |f|^2 dt + |p0|^2 ),  p' = A*p + C*f.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import NotDetectable, NotStabilizable, ValidationError
from .lti_core import GenLQProblem, adjoint

__all__ = [
    "StructuralReport",
    "hautus_stabilizable",
    "hautus_detectable",
    "synthesize_gains",
    "estimate_detectability_constant",
    "estimate_stabilizability_constant",
    "detectability_ratios",
    "stabilizability_ratios",
    "dual_problem",
    "spectral_abscissa",
    "free_decay_direction",
]

_MODULE = "structural"
RANK_RTOL = 1e-8


def spectral_abscissa(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.linalg.eigvals(a).real)) if a.size else -np.inf


def _pbh(a, b, rtol):
    n = a.shape[0]
    eig = np.linalg.eigvals(a)
    tol = 1e-9 * max(1.0, np.linalg.norm(a, 2))
    for lam in eig[eig.real >= -tol]:
        mat = np.hstack([lam * np.eye(n) - a, b.astype(complex)])
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv[-1] <= rtol * sv[0]:
            return False
    return True


def hautus_stabilizable(problem, rtol=RANK_RTOL):
    """``rank [lambda I - A, B] = n`` for every eigenvalue with ``Re lambda >= 0``."""
    return _pbh(problem.a, problem.b, rtol)


def hautus_detectable(problem, rtol=RANK_RTOL):
    """Dual test on ``[lambda I - A*, C*]`` with weighted adjoints."""
    return _pbh(adjoint(problem, "A"), adjoint(problem, "C"), rtol)


@dataclass(frozen=True)
class StructuralReport:
    stabilizable: bool
    detectable: bool
    spectral_abscissa_open_loop: float
    stabilizing_gain: Optional[np.ndarray] = None
    injection_gain: Optional[np.ndarray] = None
    closed_loop_abscissa: Optional[float] = None
    observer_abscissa: Optional[float] = None
    detectability_constant: Optional[float] = None
    stabilizability_constant: Optional[float] = None

    def to_dict(self):
        def conv(val):
            return val.tolist() if isinstance(val, np.ndarray) else val
        return {key: conv(getattr(self, key)) for key in self.__dataclass_fields__}


def synthesize_gains(problem, *, constants_horizon=None, samples=200, seed=0, dt=None):
    """Feedback ``F = -(K^T K)^-1 B^T Pi_min`` and output injection ``L``.

    ``L = -Pi_d C^T`` comes from the Riccati equation of the transposed
    system ``(A^T, C^T, B^T, I)``; if that pair is not detectable an
    identity observation is substituted.  With ``constants_horizon`` set,
    the sampled constants of both estimates are filled in as well.
    """
    from .riccati import solve_are

    op = "synthesize_gains"
    stab = hautus_stabilizable(problem)
    det = hautus_detectable(problem)
    if not stab:
        raise NotStabilizable("(A, B) fails the Hautus test", module=_MODULE, operation=op)
    if not det:
        raise NotDetectable("(A, C) fails the Hautus test", module=_MODULE, operation=op)

    pi, _ = solve_are(problem, check_structure=False)
    f = -problem.gain_map @ pi
    acl = spectral_abscissa(problem.a + problem.b @ f)

    n, p = problem.n, problem.p
    lgain, obs = None, None
    for obs_c in (problem.b.T, np.eye(n)):
        dual = GenLQProblem(a=problem.a.T, b=problem.c.T, c=obs_c, k=np.eye(p))
        if not (hautus_stabilizable(dual) and hautus_detectable(dual)):
            continue
        pid, _ = solve_are(dual, check_structure=False)
        cand = -pid @ problem.c.T
        obs = spectral_abscissa(problem.a + cand @ problem.c)
        lgain = cand
        if obs < 0:
            break

    dconst = sconst = None
    if constants_horizon is not None:
        dconst = estimate_detectability_constant(problem, constants_horizon, samples,
                                                 seed=seed, dt=dt)
        sconst = estimate_stabilizability_constant(problem, constants_horizon, samples,
                                                   seed=seed, dt=dt)
    return StructuralReport(
        stabilizable=stab, detectable=det,
        spectral_abscissa_open_loop=spectral_abscissa(problem.a),
        stabilizing_gain=f, injection_gain=lgain,
        closed_loop_abscissa=acl, observer_abscissa=obs,
        detectability_constant=dconst, stabilizability_constant=sconst)


# Sampled constants -----------------------------------------------------------

def _default_dt(problem, horizon):
    return min(horizon / 50.0, 0.01)


def detectability_ratios(problem, x0, inputs, horizon, dt):
    """Ratios ``|x(T)|^2 / (int |Cx|^2 + |u|^2 + |x0|^2)`` for a batch.

    Parameters
    ----------
    x0 : (n, S) array
    inputs : (N, m, S) array
        Piecewise-constant inputs on the grid of spacing ``dt``.
    """
    from .ocp import propagate

    x0 = np.atleast_2d(np.asarray(x0, dtype=float).T).T
    inputs = np.asarray(inputs, dtype=float)
    steps = int(round(horizon / dt))
    if inputs.shape[0] != steps:
        raise ValidationError(f"inputs need {steps} intervals", module=_MODULE,
                              operation="detectability_ratios")
    lr = problem.input_cho

    def integrand(x, u):
        cx = problem.c @ x
        ru = lr.T @ u
        return np.sum(cx * cx, axis=0) + np.sum(ru * ru, axis=0)

    xs, acc = propagate(problem, x0, inputs, dt, hold="zoh", integrand=integrand,
                        record=False)
    lw = problem.state_cho
    num = np.sum((lw.T @ xs) ** 2, axis=0)
    den = acc + np.sum((lw.T @ x0) ** 2, axis=0)
    return num / den


def dual_problem(problem):
    """Problem whose detectability estimate is the stabilizability estimate
    of ``problem``: ``p' = A*p + C*f`` observed through ``B*``.

    The state keeps the weight ``W``; the observation ``B*p`` is measured in
    the input norm, i.e. through ``R^{1/2} B* = R^{-1/2} B^T W``.
    """
    w = problem.state_weight
    lr = problem.input_cho
    return GenLQProblem(
        a=adjoint(problem, "A"), b=adjoint(problem, "C"),
        c=np.linalg.solve(lr, problem.b.T @ w),
        k=np.eye(problem.p), state_weight=w)


def stabilizability_ratios(problem, p0, inputs, horizon, dt):
    return detectability_ratios(dual_problem(problem), p0, inputs, horizon, dt)


def _sample(problem, horizon, samples, seed, dt):
    """Random unit-norm initial states and piecewise-constant N(0,1) inputs.

    Even-indexed samples use the zero input so free decay is always probed.
    Every sample draws from its own spawned stream.  The estimators replace
    the first draw by :func:`free_decay_direction`.
    """
    steps = int(round(horizon / dt))
    n, m = problem.n, problem.m
    x0 = np.empty((n, samples))
    u = np.zeros((steps, m, samples))
    lw = problem.state_cho
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(samples)):
        rng = np.random.default_rng(child)
        y = rng.standard_normal(n)
        x0[:, i] = np.linalg.solve(lw.T, y / np.linalg.norm(y))
        if i % 2:
            u[:, :, i] = rng.standard_normal((steps, m))
    return x0, u


def free_decay_direction(problem, horizon, dt):
    """Unit initial state maximizing the zero-input ratio.

    With ``u = 0`` the ratio is the generalized Rayleigh quotient
    ``x0^T N x0 / x0^T D x0`` with ``N = Phi^T W Phi`` and ``D`` the
    discrete observability Gram matrix plus ``W``; its top eigenvector is
    returned so the sample set always contains the worst free decay.
    """
    from .ocp import propagate

    n = problem.n
    steps = int(round(horizon / dt))

    def integrand(x, _):
        cx = problem.c @ x
        return cx.T @ cx

    phi, gram = propagate(problem, np.eye(n), np.zeros((steps, problem.m, n)), dt, hold="zoh",
                          integrand=integrand, record=False)
    w = problem.state_weight
    num = phi.T @ w @ phi
    den = gram + w
    _, vecs = linalg.eigh(0.5 * (num + num.T), 0.5 * (den + den.T))
    top = vecs[:, -1]
    return top / np.sqrt(top @ w @ top)


def _estimate(problem, horizon, samples, seed, dt, op):
    if not (horizon > 0) or int(samples) < 1:
        raise ValidationError("horizon must be positive and samples >= 1",
                              module=_MODULE, operation=op)
    dt = dt or _default_dt(problem, horizon)
    steps = max(1, int(round(horizon / dt)))
    dt = horizon / steps
    x0, u = _sample(problem, horizon, int(samples), seed, dt)
    x0[:, 0] = free_decay_direction(problem, horizon, dt)
    ratios = detectability_ratios(problem, x0, u, horizon, dt)
    return float(np.max(ratios))


def estimate_detectability_constant(problem, horizon, samples=200, *, seed=0, dt=None):
    """Largest sampled ratio of the detectability estimate (max semantics)."""
    op = "estimate_detectability_constant"
    if not hautus_detectable(problem):
        raise NotDetectable("(A, C) fails the Hautus test", module=_MODULE, operation=op)
    return _estimate(problem, horizon, samples, seed, dt, op)


def estimate_stabilizability_constant(problem, horizon, samples=200, *, seed=0, dt=None):
    """Largest sampled ratio of the dual (stabilizability) estimate."""
    op = "estimate_stabilizability_constant"
    if not hautus_stabilizable(problem):
        raise NotStabilizable("(A, B) fails the Hautus test", module=_MODULE, operation=op)
    return _estimate(dual_problem(problem), horizon, samples, seed, dt, op)
