"""Finite-horizon optimal control: explicit feedback solution, open-loop
rollouts with the cost identity, a direct-transcription oracle and probes
of the closed-loop evolution operators.

Time discretization
-------------------
Every integration uses classical RK4 with ``s`` internal steps per grid
interval ``dt``, chosen so that ``rho(A) dt / s <= 1`` (the heat model is
stiff).  The Riccati equation and the adjoint covector are marched with
step ``dt / (2 s)`` so that gains are available at every RK4 stage time of
the state march without interpolation.  Running-cost integrals are
accumulated as extra RK4 components.

Covector conventions
--------------------
With ``Pi(s) = W P(s)`` (Riccati Gram form, ``Pi(0) = 0``), gains are
``G(s) = (K^T K)^-1 B^T Pi(s)``.  The adjoint variable is tracked as the
covector ``zeta = W Uhat(s, 0) w``, which solves
``zeta' = A^T zeta - Pi B (K^T K)^-1 B^T zeta`` from ``zeta(0) = W w``.
The optimal control is

    u*(t) = u_e - G(T - t)(x*(t) - x_e) - (K^T K)^-1 B^T zeta(T - t).

Neither ``Pi`` nor ``zeta`` depends on ``T``, so one :class:`Plan` serves
every horizon up to the one it was built for.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import NonFiniteEncountered, SingularKKT, StepSizeTooLarge, ValidationError
from .lti_core import running_cost
from .riccati import march, spectral_radius

__all__ = [
    "Plan",
    "TrajectoryBundle",
    "EvolutionOperatorProbe",
    "build_plan",
    "get_plan",
    "propagate",
    "rollout",
    "rollout_many",
    "solve_feedback",
    "feedback_batch",
    "direct_transcription_oracle",
    "transcription_cost",
    "step_maps",
    "probe_evolution_operators",
    "probe_input_map",
    "modified_input_norms",
    "foh_l2_norm",
    "substeps",
]

_MODULE = "ocp"
STIFFNESS_BUDGET = 1.0
MAX_REFINE = 4


def substeps(problem, dt, budget=STIFFNESS_BUDGET):
    """RK4 steps per ``dt`` keeping ``rho(A) h <= budget``."""
    return max(1, math.ceil(spectral_radius(problem.a) * dt / budget - 1e-12))


def _steps(horizon, dt, op):
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValidationError(f"horizon {horizon} is not a multiple of dt {dt}",
                              module=_MODULE, operation=op)
    return steps


# State marching engine ---------------------------------------------------------

def _march_states(x0, n_int, sub, dt, field_fn, record=True):
    """RK4 march of ``x' = field_fn(k, o, j, x)[0]``.

    ``k`` is the grid interval, ``o`` in ``0..2 sub`` the half-step offset
    within it and ``j`` the global half-step index (time ``j dt / (2 sub)``).
    ``field_fn`` returns ``(dx, q)``; ``q`` (or ``None``) is an integrand
    accumulated with the RK4 weights.  Returns node states (or the final
    state) and the accumulated integral.
    """
    h = dt / sub
    x = np.array(x0, dtype=float)
    out = np.empty((n_int + 1,) + x.shape) if record else None
    if record:
        out[0] = x
    acc = 0.0
    for k in range(n_int):
        base = 2 * k * sub
        for i in range(sub):
            o = 2 * i
            j = base + o
            k1, q1 = field_fn(k, o, j, x)
            x2 = x + 0.5 * h * k1
            k2, q2 = field_fn(k, o + 1, j + 1, x2)
            x3 = x + 0.5 * h * k2
            k3, q3 = field_fn(k, o + 1, j + 1, x3)
            x4 = x + h * k3
            k4, q4 = field_fn(k, o + 2, j + 2, x4)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if q1 is not None:
                acc = acc + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteEncountered(f"state overflowed at t={(k + 1) * dt:.4g}",
                                       module=_MODULE, operation="rollout")
        if record:
            out[k + 1] = x
    return (out if record else x), acc


class _Signal:
    """Grid input, either first-order hold (``N+1`` nodes) or zero-order hold
    (``N`` interval values).  Trailing axes beyond ``m`` are batch axes."""

    def __init__(self, values, n_int, sub, hold, m, op="rollout"):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        need = n_int + 1 if hold == "linear" else n_int
        if hold not in ("linear", "zoh"):
            raise ValidationError(f"unknown hold {hold!r}", module=_MODULE, operation=op)
        if values.shape[0] != need or values.shape[1] != m:
            raise ValidationError(f"{hold} input needs shape ({need}, {m}, ...), got "
                                  f"{values.shape}", module=_MODULE, operation=op)
        if not np.all(np.isfinite(values)):
            raise ValidationError("input contains non-finite values", module=_MODULE,
                                  operation=op)
        self.values, self.hold, self.sub = values, hold, sub
        if hold == "linear":
            self.slope = np.diff(values, axis=0) / (2 * sub)

    def __call__(self, k, o):
        if self.hold == "zoh":
            return self.values[k]
        return self.values[k] + o * self.slope[k]

    def nodes(self):
        """Values at the ``N+1`` grid nodes (the last interval value is
        repeated at ``t = T`` for zero-order hold)."""
        if self.hold == "linear":
            return self.values
        return np.concatenate([self.values, self.values[-1:]], axis=0)


def propagate(problem, x0, inputs, dt, hold="zoh", integrand=None, record=True):
    """Open-loop propagation of ``x' = Ax + Bu`` for a batch of columns.

    ``integrand(x, u)`` (optional) is accumulated along the trajectory.
    """
    x0 = np.asarray(x0, dtype=float)
    n_int = np.asarray(inputs).shape[0] - (1 if hold == "linear" else 0)
    sub = substeps(problem, dt)
    sig = _Signal(inputs, n_int, sub, hold, problem.m)
    a, b = problem.a, problem.b

    def fld(k, o, j, x):
        u = sig(k, o)
        return a @ x + b @ u, (None if integrand is None else integrand(x, u))

    return _march_states(x0, n_int, sub, dt, fld, record)


# Plan ---------------------------------------------------------------------------

@dataclass(eq=False)
class Plan:
    """Riccati gains and adjoint covector on the half-step grid.

    Attributes
    ----------
    gains : (J+1, m, n) array
        ``G`` at times ``j * delta``.
    zeta : (J+1, n) array
        Adjoint covector at the same times.
    pis : dict
        ``Pi`` at selected grid indices ``k`` (times ``k * dt``).
    """

    problem: object
    dt: float
    sub: int
    n_int: int
    gains: np.ndarray
    zeta: np.ndarray
    pis: dict
    steady: object

    @property
    def delta(self):
        return self.dt / (2 * self.sub)

    @property
    def horizon(self):
        return self.n_int * self.dt

    def pi_at(self, horizon):
        k = int(round(horizon / self.dt))
        if k not in self.pis:
            raise KeyError(horizon)
        return self.pis[k]

    def utilde_star(self, n_int):
        """Optimal transformed input ``-(K^T K)^-1 B^T zeta(T - t)`` on the
        half-step grid of horizon ``n_int * dt``."""
        jt = 2 * self.sub * n_int
        return -(self.zeta[jt::-1] @ self.problem.gain_map.T)


def _march_plan(problem, dt, n_int, sub, horizons, steady, rtol):
    n_fine = 2 * sub * n_int
    wanted = {int(round(t / dt)) for t in horizons}
    gains = np.empty((n_fine + 1, problem.m, problem.n))
    zeta = np.empty((n_fine + 1, problem.n))
    pis = {}
    gmap = problem.gain_map
    stride = 2 * sub

    def keep(j, pi, z):
        gains[j] = gmap @ pi
        zeta[j] = z[:, 0]
        if j % stride == 0 and j // stride in wanted:
            pis[j // stride] = pi.copy()

    march(problem, dt / (2 * sub), n_fine, None, problem.state_weight @ steady.w[:, None],
          on_node=keep, rtol=rtol, operation="build_plan")
    return gains, zeta, pis


def build_plan(problem, dt, horizon, pi_horizons=(), steady=None, rtol=1e-7):
    from .steady_state import steady_state

    n_int = _steps(horizon, dt, "build_plan")
    if steady is None:
        steady = steady_state(problem)
    pi_horizons = tuple(pi_horizons)
    sub = substeps(problem, dt)
    # rho(A) ignores the quadratic term; refine until the Richardson guard is met
    for attempt in range(MAX_REFINE + 1):
        try:
            gains, zeta, pis = _march_plan(problem, dt, n_int, sub, pi_horizons + (horizon,),
                                           steady, rtol)
            break
        except StepSizeTooLarge:
            if attempt == MAX_REFINE:
                raise
            sub *= 2
    return Plan(problem, float(dt), sub, n_int, gains, zeta, pis, steady)


_PLANS = weakref.WeakKeyDictionary()


def get_plan(problem, dt, horizon, pi_horizons=()):
    """Cached :func:`build_plan`; reuses a plan covering the request."""
    need = {int(round(t / dt)) for t in tuple(pi_horizons) + (horizon,)}
    cached = _PLANS.get(problem)
    if cached is not None and abs(cached.dt - dt) < 1e-15 and cached.n_int * dt >= horizon - 1e-12:
        if need <= set(cached.pis):
            return cached
        need |= set(cached.pis)
        horizon = max(horizon, cached.horizon)
    plan = build_plan(problem, dt, horizon, pi_horizons=[k * dt for k in need])
    _PLANS[problem] = plan
    return plan


# Bundles ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """Trajectory on the uniform grid with cost bookkeeping.

    ``cost`` integrates the running cost with the RK4 weights of the state
    march; ``cost_trapezoid`` is the node trapezoid rule.  The cost identity
    compares ``cost`` with ``int |K u~|^2 + <P(T) x~0, x~0> + 2 <w, x~(T) -
    x~0> + T l(x_e, u_e)`` in shifted coordinates.
    """

    grid: np.ndarray
    x: np.ndarray
    u: np.ndarray
    u_tilde: np.ndarray
    cost: float
    cost_identity_residual: float
    cost_trapezoid: float
    identity_rhs: float
    discrete_cost: Optional[float] = None

    @property
    def horizon(self):
        return float(self.grid[-1])

    @property
    def relative_identity_residual(self):
        return self.cost_identity_residual / (1.0 + abs(self.cost))


def _trapezoid_cost(problem, xs, us, dt):
    """Node trapezoid rule for ``(N+1, n, S)`` states and ``(N+1, m, S)`` inputs."""
    n_nodes, n, batch = xs.shape
    x = xs.transpose(1, 0, 2).reshape(n, -1)
    u = us.transpose(1, 0, 2).reshape(us.shape[1], -1)
    vals = _lcost(problem, x, u).reshape(n_nodes, batch)
    return dt * (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1]))


def _lcost(problem, x, u):
    cx = problem.c @ x
    ku = problem.k @ u
    return (np.sum(cx * cx, axis=0) + np.sum(ku * ku, axis=0)
            + 2.0 * (problem.z_cov @ x) + 2.0 * (problem.v_cov @ u))


def _kquad(problem, u):
    ku = problem.k @ u
    return np.sum(ku * ku, axis=0)


def _identity_rhs(problem, plan, steady, n_int, xt0, xtT, kint):
    pi_t = plan.pi_at(n_int * plan.dt)
    what = problem.state_weight @ steady.w
    lin_e = running_cost(problem, steady.x_e, steady.u_e)
    quad0 = np.einsum("is,ij,js->s", xt0, pi_t, xt0)
    return kint + quad0 + 2.0 * (what @ (xtT - xt0)) + n_int * plan.dt * lin_e


def _plan_for(instance, plan):
    # a supplied plan may lack P(T) for this horizon; extend it through the cache
    steps = int(round(instance.horizon / instance.dt))
    if plan is not None and (plan.problem is not instance.problem
                             or abs(plan.dt - instance.dt) > 1e-15):
        raise ValidationError("plan was built for a different problem or step",
                              module=_MODULE, operation="solve_feedback")
    if plan is not None and steps in plan.pis:
        return plan
    horizon = instance.horizon if plan is None else max(plan.horizon, instance.horizon)
    return get_plan(instance.problem, instance.dt, horizon, pi_horizons=[instance.horizon])


def rollout_many(instance, inputs, hold="linear", plan=None):
    """Batched :func:`rollout`; ``inputs`` carries the batch on its last axis."""
    prob = instance.problem
    dt = instance.dt
    n_int = instance.steps
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 2:
        inputs = inputs[:, :, None]
    n_batch = inputs.shape[2]
    plan = _plan_for(instance, plan)
    sub = plan.sub
    st = plan.steady
    sig = _Signal(inputs, n_int, sub, hold, prob.m)
    a, b = prob.a, prob.b
    jt = 2 * sub * n_int
    gains = plan.gains
    x_e, u_e = st.x_e[:, None], st.u_e[:, None]

    def fld(k, o, j, x):
        u = sig(k, o)
        ut = (u - u_e) + gains[jt - j] @ (x - x_e)
        return a @ x + b @ u, np.stack([_lcost(prob, x, u), _kquad(prob, ut)])

    x0 = np.repeat(instance.x0[:, None], n_batch, axis=1)
    xs, acc = _march_states(x0, n_int, sub, dt, fld)
    us = sig.nodes()
    rhs = _identity_rhs(prob, plan, st, n_int, x0 - x_e, xs[-1] - x_e, acc[1])
    trap = _trapezoid_cost(prob, xs, us, dt)
    gnodes = gains[jt::-2 * sub]                          # G(T - t_k)
    grid = instance.grid
    bundles = []
    for s in range(n_batch):
        ut = (us[:, :, s] - st.u_e) + np.einsum("kij,kj->ki", gnodes, xs[:, :, s] - st.x_e)
        bundles.append(TrajectoryBundle(
            grid=grid, x=xs[:, :, s], u=us[:, :, s], u_tilde=ut, cost=float(acc[0][s]),
            cost_identity_residual=float(abs(acc[0][s] - rhs[s])),
            cost_trapezoid=float(trap[s]), identity_rhs=float(rhs[s])))
    return bundles


def rollout(instance, inputs, hold="linear", plan=None):
    """Integrate the dynamics under a given grid input.

    Parameters
    ----------
    instance : OcpInstance
    inputs : array
        ``(N+1, m)`` node values for ``hold="linear"`` or ``(N, m)``
        interval values for ``hold="zoh"``.
    """
    return rollout_many(instance, np.asarray(inputs, dtype=float)[:, :, None]
                        if np.ndim(inputs) == 2 else np.asarray(inputs, dtype=float),
                        hold, plan)[0]


# Feedback -----------------------------------------------------------------------

def feedback_batch(plan, x0s, horizon, need_cost=True):
    """Closed-loop optimal trajectories for several initial states.

    Returns ``(xt, ut, costs, kint)`` with ``xt = x* - x_e`` of shape
    ``(N+1, n, S)``, ``ut = u* - u_e`` of shape ``(N+1, m, S)``, the costs
    and ``int |K u~*|^2``.
    """
    prob = plan.problem
    n_int = _steps(horizon, plan.dt, "solve_feedback")
    if n_int > plan.n_int:
        raise ValidationError("plan does not cover the horizon", module=_MODULE,
                              operation="solve_feedback")
    st = plan.steady
    sub = plan.sub
    jt = 2 * sub * n_int
    gains = plan.gains
    ustar = plan.utilde_star(n_int)                     # indexed by forward half-step j
    a, b = prob.a, prob.b
    x_e, u_e = st.x_e[:, None], st.u_e[:, None]
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float).T).T

    def fld(k, o, j, xt):
        du = ustar[j][:, None] - gains[jt - j] @ xt
        dx = a @ xt + b @ du
        if not need_cost:
            return dx, None
        return dx, np.stack([_lcost(prob, xt + x_e, du + u_e),
                             np.full(xt.shape[1], _kquad(prob, ustar[j]))])

    xt, acc = _march_states(x0s - x_e, n_int, sub, plan.dt, fld)
    gnodes = gains[jt::-2 * sub]
    ut = ustar[::2 * sub][:, :, None] - np.einsum("kij,kjs->kis", gnodes, xt)
    if not need_cost:
        return xt, ut, None, None
    return xt, ut, acc[0], acc[1]


def solve_feedback(instance, plan=None):
    """Optimal trajectory from the explicit feedback representation."""
    prob = instance.problem
    plan = _plan_for(instance, plan)
    st = plan.steady
    n_int = instance.steps
    xt, ut, cost, kint = feedback_batch(plan, instance.x0[:, None], instance.horizon)
    xs = xt[:, :, 0] + st.x_e
    us = ut[:, :, 0] + st.u_e
    x0t = (instance.x0 - st.x_e)[:, None]
    rhs = _identity_rhs(prob, plan, st, n_int, x0t, xt[-1], kint)
    ustar = plan.utilde_star(n_int)[::2 * plan.sub]
    return TrajectoryBundle(
        grid=instance.grid, x=xs, u=us, u_tilde=ustar, cost=float(cost[0]),
        cost_identity_residual=float(abs(cost[0] - rhs[0])),
        cost_trapezoid=float(_trapezoid_cost(prob, xs[:, :, None], us[:, :, None],
                                             instance.dt)[0]),
        identity_rhs=float(rhs[0]))


# Direct transcription -----------------------------------------------------------

def step_maps(problem, dt):
    """One-interval maps of the discretized dynamics with first-order hold
    and the matching interval cost.

    Returns ``(Phi, Gamma0, Gamma1, Qi, li)`` with
    ``x_{k+1} = Phi x_k + Gamma0 u_k + Gamma1 u_{k+1}`` and interval cost
    ``y^T Qi y + 2 li^T y`` for ``y = (x_k, u_k, u_{k+1})``, both produced
    by the same RK4 march (and cost accumulation) as :func:`rollout`.
    """
    n, m = problem.n, problem.m
    cols = n + 2 * m
    x0 = np.zeros((n, cols))
    x0[:, :n] = np.eye(n)
    u = np.zeros((2, m, cols))
    u[0, :, n:n + m] = np.eye(m)
    u[1, :, n + m:] = np.eye(m)
    hq = linalg.block_diag(problem.q_form, problem.r_form)
    hl = np.concatenate([problem.z_cov, problem.v_cov])

    def integrand(x, uu):
        z = np.vstack([x, uu])
        return np.vstack([z.T @ hq @ z, hl @ z])

    out, acc = propagate(problem, x0, u, dt, hold="linear", integrand=integrand, record=False)
    qi = acc[:cols]
    return (out[:, :n], out[:, n:n + m], out[:, n + m:], 0.5 * (qi + qi.T), acc[cols])


def transcription_cost(instance, u_nodes, maps=None):
    """Objective of the transcribed program: the sum of interval costs of
    the first-order-hold input ``u_nodes`` under :func:`step_maps`."""
    prob = instance.problem
    phi, g0, g1, qi, li = maps or step_maps(prob, instance.dt)
    u_nodes = np.asarray(u_nodes, dtype=float)
    x = np.array(instance.x0, dtype=float)
    total = 0.0
    for k in range(instance.steps):
        y = np.concatenate([x, u_nodes[k], u_nodes[k + 1]])
        total += y @ qi @ y + 2.0 * li @ y
        x = phi @ x + g0 @ u_nodes[k] + g1 @ u_nodes[k + 1]
    return float(total)


def direct_transcription_oracle(instance, plan=None):
    """Minimize the transcribed cost over the node inputs ``u_0, ..., u_N``.

    The decision variables are the first-order-hold node values; dynamics
    and cost come from :func:`step_maps`, i.e. the exact cost of the
    discretized trajectory as :func:`rollout` measures it.  The quadratic
    program is solved exactly by a backward affine-LQ sweep on the augmented
    state ``s_k = (x_k, u_k)`` with ``s_{k+1} = F s_k + E u_{k+1}``; the
    minimizing ``u_0`` is then read off the value function at ``k = 0``.
    No Riccati equation, steady state or adjoint vector is involved.
    """
    op = "direct_transcription_oracle"
    prob = instance.problem
    n, m = prob.n, prob.m
    ns = n + m
    n_int = instance.steps
    maps = step_maps(prob, instance.dt)
    phi, g0, g1, qi, li = maps
    f = np.block([[phi, g0], [np.zeros((m, n)), np.zeros((m, m))]])
    e = np.vstack([g1, np.eye(m)])

    mq = np.zeros((ns, ns))
    ml = np.zeros(ns)
    lgain = np.empty((n_int, m, ns))
    loff = np.empty((n_int, m))
    for k in range(n_int - 1, -1, -1):
        me = mq @ e
        suu = qi[ns:, ns:] + e.T @ me
        sus = qi[ns:, :ns] + me.T @ f
        su = li[ns:] + e.T @ ml
        try:
            cho = linalg.cho_factor(0.5 * (suu + suu.T))
        except linalg.LinAlgError as exc:
            raise SingularKKT(f"stage Hessian not positive definite at k={k}",
                              module=_MODULE, operation=op) from exc
        lk = -linalg.cho_solve(cho, sus)
        lo = -linalg.cho_solve(cho, su)
        lgain[k], loff[k] = lk, lo
        tmat = np.vstack([np.eye(ns), lk])
        toff = np.concatenate([np.zeros(ns), lo])
        fc = f + e @ lk
        ec = e @ lo
        ml = tmat.T @ (qi @ toff + li) + fc.T @ (mq @ ec + ml)
        mq = tmat.T @ qi @ tmat + fc.T @ mq @ fc
        mq = 0.5 * (mq + mq.T)
    try:
        u0 = -linalg.solve(mq[n:, n:], mq[n:, :n] @ instance.x0 + ml[n:], assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularKKT("initial-input Hessian singular", module=_MODULE,
                          operation=op) from exc
    us = np.empty((n_int + 1, m))
    s = np.concatenate([instance.x0, u0])
    us[0] = u0
    for k in range(n_int):
        unext = lgain[k] @ s + loff[k]
        s = f @ s + e @ unext
        us[k + 1] = unext
    bundle = rollout(instance, us, hold="linear", plan=plan)
    disc = transcription_cost(instance, us, maps)
    return TrajectoryBundle(**{**bundle.__dict__, "discrete_cost": disc})


# Probes -------------------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionOperatorProbe:
    """Sampled operator norms ``(tau, t, |U(t, tau)|)`` in the state norm."""

    kind: str
    horizon: float
    samples: list = field(default_factory=list)

    def as_array(self):
        return np.array(self.samples, dtype=float).reshape(-1, 3)


def _grid_index(values, dt, op):
    idx = np.rint(np.asarray(values, dtype=float) / dt).astype(int)
    if np.any(np.abs(idx * dt - np.asarray(values, dtype=float)) > 1e-9 * max(1.0, dt)):
        raise ValidationError("probe times must lie on the dt grid", module=_MODULE,
                              operation=op)
    return idx


def probe_evolution_operators(instance, taus, ts, kind="forward", plan=None):
    """Operator norms of the closed-loop evolution families.

    ``kind="forward"``: ``x' = (A - B G(T - t)) x`` (state transition).
    ``kind="adjoint"``: ``z' = (A* - P(t) B (K*K)^-1 B*) z``.  Only pairs
    with ``tau <= t <= T`` are evaluated.
    """
    op = "probe_evolution_operators"
    if kind not in ("forward", "adjoint"):
        raise ValidationError(f"kind must be forward or adjoint, got {kind!r}",
                              module=_MODULE, operation=op)
    prob = instance.problem
    dt, n_int = instance.dt, instance.steps
    plan = plan or get_plan(prob, dt, instance.horizon)
    lw = prob.state_cho
    lw_inv = linalg.solve_triangular(lw, np.eye(prob.n), lower=True)
    tau_idx = _grid_index(taus, dt, op)
    t_idx = _grid_index(ts, dt, op)
    sub = plan.sub
    if kind == "adjoint":
        samples = _adjoint_probe(prob, dt, sub, tau_idx, t_idx, n_int, lw, lw_inv, op)
        return EvolutionOperatorProbe(kind=kind, horizon=instance.horizon, samples=samples)
    samples = []
    jt = 2 * sub * n_int
    a, b, gains = prob.a, prob.b, plan.gains
    for ti in sorted(set(int(v) for v in tau_idx)):
        targets = sorted(set(int(v) for v in t_idx if ti <= v <= n_int))
        if not targets:
            continue
        off = 2 * sub * ti

        def fld(k, o, j, xm, off=off):
            return a @ xm - b @ (gains[jt - off - j] @ xm), None

        mats, _ = _march_states(np.eye(prob.n), targets[-1] - ti, sub, dt, fld)
        for tk in targets:
            mat = lw.T @ mats[tk - ti] @ lw_inv.T
            samples.append((ti * dt, tk * dt, float(np.linalg.norm(mat, 2))))
    return EvolutionOperatorProbe(kind=kind, horizon=instance.horizon, samples=samples)


def _adjoint_probe(prob, dt, sub, tau_idx, t_idx, n_int, lw, lw_inv, op):
    """One Riccati march carrying a propagator block per starting time;
    a fresh identity block is appended whenever the march reaches a ``tau``."""
    n = prob.n
    delta = dt / (2 * sub)
    taus = sorted(set(int(v) for v in tau_idx))
    targets = sorted(set(int(v) for v in t_idx if v <= n_int))
    if not taus or not targets or targets[-1] < taus[0]:
        return []
    stops = sorted(set(taus) | {targets[-1]})
    pi = None
    blocks = None
    active = []
    found = {}
    pos = 0
    for stop in stops:
        if stop > pos:
            def keep(j, pi_j, z, start=pos):
                if z is not None and j % (2 * sub) == 0:
                    k = start + j // (2 * sub)
                    if k in targets:
                        for col, tau in enumerate(active):
                            if tau <= k:
                                found[(tau, k)] = z[:, col * n:(col + 1) * n].copy()
            pi, blocks = march(prob, delta, 2 * sub * (stop - pos), pi, blocks, on_node=keep,
                               rtol=np.inf, check_every=0, operation=op)
            pos = stop
        if stop in taus:
            active.append(stop)
            blocks = np.eye(n) if blocks is None else np.hstack([blocks, np.eye(n)])
            if stop in targets:
                found[(stop, stop)] = np.eye(n)
    samples = []
    for tau in taus:
        for k in targets:
            if (tau, k) in found:
                mat = lw_inv @ found[(tau, k)] @ lw
                samples.append((tau * dt, k * dt, float(np.linalg.norm(mat, 2))))
    return samples


def foh_l2_norm(problem, values, dt):
    """Exact ``L^2`` norm (input product) of a first-order-hold signal."""
    values = np.asarray(values, dtype=float)
    lr = problem.input_cho
    y = values @ lr                                       # rows: (L^T u)^T
    a, b = y[:-1], y[1:]
    return float(np.sqrt(dt / 3.0 * np.sum(a * a + a * b + b * b)))


def probe_input_map(instance, inputs, plan=None):
    """Ratios ``|Phi(u~)|_H / |u~|_{L^2}`` for zero-initial-state rollouts of
    ``x' = (A - B G(T - t)) x + B u~`` evaluated at ``t = T``.

    Each input is an ``(N+1, m)`` first-order-hold grid function; a zero
    input gets ratio 0.
    """
    prob = instance.problem
    dt, n_int = instance.dt, instance.steps
    plan = plan or get_plan(prob, dt, instance.horizon)
    sub = plan.sub
    jt = 2 * sub * n_int
    arr = np.stack([np.asarray(u, dtype=float).reshape(n_int + 1, prob.m) for u in inputs],
                   axis=-1)
    sig = _Signal(arr, n_int, sub, "linear", prob.m, op="probe_input_map")
    a, b, gains = prob.a, prob.b, plan.gains

    def fld(k, o, j, x):
        return a @ x - b @ (gains[jt - j] @ x) + b @ sig(k, o), None

    xs, _ = _march_states(np.zeros((prob.n, arr.shape[-1])), n_int, sub, dt, fld,
                          record=False)
    lw = prob.state_cho
    out = []
    for s in range(arr.shape[-1]):
        den = foh_l2_norm(prob, arr[:, :, s], dt)
        num = float(np.linalg.norm(lw.T @ xs[:, s]))
        out.append(0.0 if den == 0.0 else num / den)
    return out


def modified_input_norms(instance, t0s, plan=None):
    """``|u~*|_{L^2([0, T0])}`` (input norm) for each ``T0`` in ``t0s``.

    Simpson's rule on the half-step grid; ``T0`` must lie on the dt grid.
    """
    prob = instance.problem
    dt, n_int = instance.dt, instance.steps
    plan = plan or get_plan(prob, dt, instance.horizon)
    sub = plan.sub
    ustar = plan.utilde_star(n_int)
    y = ustar @ prob.input_cho
    sq = np.sum(y * y, axis=1)
    h = dt / sub
    per_step = h / 6.0 * (sq[0:-1:2] + 4.0 * sq[1::2] + sq[2::2])
    cum = np.concatenate([[0.0], np.cumsum(per_step)])
    idx = _grid_index(t0s, dt, "modified_input_norms") * sub
    return [float(np.sqrt(cum[i])) for i in idx]
