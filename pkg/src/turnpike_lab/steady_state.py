"""Optimal steady state, its optimality certificate and the adjoint steady state.

The optimal steady state minimizes the running cost over controlled
equilibria ``Ax + Bu = 0``.  It is characterized by the gradient
``(z + C*C x_e, v + K*K u_e)`` being orthogonal to ``ker [A B]``; the
adjoint steady state ``w`` represents that gradient as
``(A*w, B*w)`` whenever such a ``w`` exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import SingularKKT, ValidationError
from .lti_core import input_norm, state_norm

__all__ = [
    "SteadyState",
    "solve_ossp",
    "solve_adjoint_steady",
    "steady_state",
    "shift_problem",
    "null_space_basis",
    "counterexample_scan",
    "CounterexampleRow",
]

_MODULE = "steady_state"
RANK_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Optimal steady state ``(x_e, u_e)`` with residual diagnostics.

    ``w`` (the adjoint steady state) and ``w_residual`` are only present
    after :func:`solve_adjoint_steady`.  ``existence_uncertain`` is set when
    ``(A, B)`` fails the Hautus test, so that a small residual is not backed
    by a closed-range argument.
    """

    x_e: np.ndarray
    u_e: np.ndarray
    equilibrium_residual: float
    projection_residual: float
    w: Optional[np.ndarray] = None
    w_residual: Optional[float] = None
    existence_uncertain: bool = False
    w_scale: Optional[float] = None

    def to_dict(self):
        out = {
            "x_e": self.x_e.tolist(),
            "u_e": self.u_e.tolist(),
            "equilibrium_residual": self.equilibrium_residual,
            "projection_residual": self.projection_residual,
        }
        if self.w is not None:
            out.update(w=self.w.tolist(), w_residual=self.w_residual,
                       w_norm_squared=float(self.w @ self.w),
                       existence_uncertain=self.existence_uncertain)
        return out


def null_space_basis(problem, rtol=RANK_RTOL):
    """Basis of ``ker [A B]`` orthonormal in the product ``diag(W, R)``."""
    ab = np.hstack([problem.a, problem.b])
    _, sv, vt = np.linalg.svd(ab)
    rank = int(np.count_nonzero(sv > rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    basis = vt[rank:].T
    if basis.shape[1] == 0:
        return basis
    gram = linalg.block_diag(problem.state_weight, problem.input_weight)
    chol = np.linalg.cholesky(basis.T @ gram @ basis)
    return linalg.solve_triangular(chol, basis.T, lower=True).T


def _gradient_covector(problem, x, u):
    return np.concatenate([problem.z_cov + problem.q_form @ x,
                           problem.v_cov + problem.r_form @ u])


def solve_ossp(problem, rtol=RANK_RTOL):
    """Minimize the running cost subject to ``Ax + Bu = 0`` through the KKT system

        [2 C^T C   0        A^T] [x]   [-2 W z]
        [0         2 K^T K  B^T] [u] = [-2 R v]
        [A         B        0  ] [l]   [  0   ]
    """
    n, m = problem.n, problem.m
    a, b = problem.a, problem.b
    kkt = np.block([
        [2.0 * problem.q_form, np.zeros((n, m)), a.T],
        [np.zeros((m, n)), 2.0 * problem.r_form, b.T],
        [a, b, np.zeros((n, n))],
    ])
    rhs = np.concatenate([-2.0 * problem.z_cov, -2.0 * problem.v_cov, np.zeros(n)])
    sv = np.linalg.svd(kkt, compute_uv=False)
    if sv[-1] <= rtol * sv[0]:
        raise SingularKKT(f"KKT matrix numerically singular (sigma_min/sigma_max = "
                          f"{sv[-1] / sv[0]:.2e}); uniqueness hypotheses fail",
                          module=_MODULE, operation="solve_ossp")
    lu = linalg.lu_factor(kkt)
    sol = linalg.lu_solve(lu, rhs)
    for _ in range(2):
        sol += linalg.lu_solve(lu, rhs - kkt @ sol)
    x_e, u_e = sol[:n], sol[n:n + m]
    basis = null_space_basis(problem, rtol)
    grad = _gradient_covector(problem, x_e, u_e)
    proj = float(np.linalg.norm(basis.T @ grad)) if basis.size else 0.0
    eq = float(state_norm(problem, a @ x_e + b @ u_e))
    return SteadyState(x_e=x_e, u_e=u_e, equilibrium_residual=eq, projection_residual=proj)


def solve_adjoint_steady(problem, steady):
    """Minimum-norm least-squares solution of ``A*w = z~``, ``B*w = v~``.

    With ``W = L L^T`` and ``R = M M^T`` the weighted problem becomes the
    Euclidean least-squares problem for ``y = L^T w``:

        [L^-1 A^T L] y ~ L^-1 (W z~),   [M^-1 B^T L] y ~ M^-1 (R v~).
    """
    from .structural import hautus_stabilizable

    lw, lr = problem.state_cho, problem.input_cho
    grad = _gradient_covector(problem, steady.x_e, steady.u_e)
    n = problem.n
    top = linalg.solve_triangular(lw, problem.a.T @ lw, lower=True)
    bottom = linalg.solve_triangular(lr, problem.b.T @ lw, lower=True)
    rhs = np.concatenate([linalg.solve_triangular(lw, grad[:n], lower=True),
                          linalg.solve_triangular(lr, grad[n:], lower=True)])
    mat = np.vstack([top, bottom])
    y = np.linalg.lstsq(mat, rhs, rcond=None)[0]
    w = linalg.solve_triangular(lw.T, y, lower=False)
    res = mat @ y - rhs
    w_res = float(np.linalg.norm(res[:n]) + np.linalg.norm(res[n:]))
    scale = float(1.0 + state_norm(problem, problem.z) + input_norm(problem, problem.v))
    return SteadyState(x_e=steady.x_e, u_e=steady.u_e,
                       equilibrium_residual=steady.equilibrium_residual,
                       projection_residual=steady.projection_residual,
                       w=w, w_residual=w_res, w_scale=scale,
                       existence_uncertain=not hautus_stabilizable(problem))


def steady_state(problem):
    """:func:`solve_ossp` followed by :func:`solve_adjoint_steady`."""
    return solve_adjoint_steady(problem, solve_ossp(problem))


def shift_problem(problem, steady):
    """Problem with linear weights ``z + C*C x_e`` and ``v + K*K u_e``; its
    optimal steady state is the origin."""
    z = problem.z + np.linalg.solve(problem.state_weight, problem.q_form @ steady.x_e)
    v = problem.v + np.linalg.solve(problem.input_weight, problem.r_form @ steady.u_e)
    return problem.replace(z=z, v=v)


@dataclass(frozen=True)
class CounterexampleRow:
    N: int
    w_norm: float
    w_residual: float
    x_e_norm: float
    u_e_norm: float


def counterexample_scan(max_dim, step=2):
    """Adjoint steady states of the truncated counterexample family for
    ``N = step, 2 step, ..., max_dim``."""
    from .models import build_appendix_b

    if int(max_dim) != max_dim or max_dim < 2:
        raise ValidationError(f"max_dim must be an integer >= 2, got {max_dim}",
                              module=_MODULE, operation="counterexample_scan")
    rows = []
    for dim in range(step, int(max_dim) + 1, step):
        prob = build_appendix_b(dim)
        st = steady_state(prob)
        rows.append(CounterexampleRow(dim, float(np.linalg.norm(st.w)), st.w_residual,
                                      float(np.linalg.norm(st.x_e)),
                                      float(np.linalg.norm(st.u_e))))
    return rows
