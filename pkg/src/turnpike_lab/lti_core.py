"""Problem data model for generalized linear-quadratic control problems.

A problem is the tuple ``(A, B, C, K, z, v)`` together with Gram matrices
for the state and input inner products,

    <x, y>_H = x^T W y,        <u, w>_U = u^T R u.

The output space of ``C`` and the range space of ``K`` are Euclidean.  With
these conventions the adjoints are

    A* = W^-1 A^T W,   B* = R^-1 B^T W,   C* = W^-1 C^T,   K*K = R^-1 K^T K,

and the running cost is

    l(x, u) = |Cx|^2 + |Ku|^2 + 2 <z, x>_H + 2 <v, u>_U.

Most numerical routines work with the equivalent Euclidean "covector"
data ``Q = C^T C``, ``Ru = K^T K``, ``q = W z`` and ``r = R v``; the Gram
matrices then only enter through norms and through conversions between
operators and bilinear forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import CoercivityError, DimensionError, ValidationError

__all__ = [
    "GenLQProblem",
    "OcpInstance",
    "running_cost",
    "adjoint",
    "equilibrium_residual",
    "state_norm",
    "input_norm",
    "problem_from_dict",
    "problem_to_dict",
    "instance_from_dict",
    "instance_to_dict",
    "load_json",
]

_MODULE = "lti_core"


def _matrix(value, name, *, op="GenLQProblem"):
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got ndim={arr.ndim}",
                             field=name, module=_MODULE, operation=op)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries",
                              module=_MODULE, operation=op)
    return arr


def _vector(value, name, size, *, op="GenLQProblem"):
    if value is None:
        return np.zeros(size)
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise DimensionError(f"{name} must have length {size}, got {arr.size}",
                             field=name, module=_MODULE, operation=op)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries",
                              module=_MODULE, operation=op)
    return arr


def _spd(value, name, size):
    if value is None:
        return np.eye(size)
    arr = _matrix(value, name)
    if arr.shape != (size, size):
        raise DimensionError(f"{name} must be {size}x{size}, got {arr.shape}",
                             field=name, module=_MODULE, operation="GenLQProblem")
    scale = max(1.0, np.abs(arr).max())
    if np.abs(arr - arr.T).max() > 1e-12 * scale:
        raise ValidationError(f"{name} is not symmetric",
                              module=_MODULE, operation="GenLQProblem")
    arr = 0.5 * (arr + arr.T)
    if np.linalg.eigvalsh(arr)[0] <= 0.0:
        raise ValidationError(f"{name} is not positive definite",
                              module=_MODULE, operation="GenLQProblem")
    return arr


def _readonly(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GenLQProblem:
    """Finite-dimensional generalized LQ problem.

    Parameters
    ----------
    a : (n, n) array
        System generator.
    b : (n, m) array
        Control operator.
    c : (p, n) array
        Observation operator.
    k : (q, m) array
        Input weighting, ``q >= m`` and ``K*K`` coercive.
    z, v : arrays of length n and m
        Linear state and input cost weights.
    state_weight, input_weight : SPD arrays, optional
        Gram matrices of the state and input inner products (identity by
        default).
    coercivity_floor : float
        Smallest admissible eigenvalue of ``K*K`` relative to its largest.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    k: np.ndarray
    z: np.ndarray = None
    v: np.ndarray = None
    state_weight: np.ndarray = None
    input_weight: np.ndarray = None
    coercivity_floor: float = field(default=1e-10)

    def __post_init__(self):
        a = _matrix(self.a, "a")
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionError(f"a must be square, got {a.shape}", field="a",
                                 module=_MODULE, operation="GenLQProblem")
        b = _matrix(self.b, "b")
        if b.shape[0] != n:
            raise DimensionError(f"b must have {n} rows, got {b.shape[0]}",
                                 field="b", module=_MODULE, operation="GenLQProblem")
        m = b.shape[1]
        c = _matrix(self.c, "c")
        if c.shape[1] != n:
            raise DimensionError(f"c must have {n} columns, got {c.shape[1]}",
                                 field="c", module=_MODULE, operation="GenLQProblem")
        k = _matrix(self.k, "k")
        if k.shape[1] != m:
            raise DimensionError(f"k must have {m} columns, got {k.shape[1]}",
                                 field="k", module=_MODULE, operation="GenLQProblem")
        if k.shape[0] < m:
            raise DimensionError(f"k must have at least {m} rows, got {k.shape[0]}",
                                 field="k", module=_MODULE, operation="GenLQProblem")
        z = _vector(self.z, "z", n)
        v = _vector(self.v, "v", m)
        w = _spd(self.state_weight, "state_weight", n)
        r = _spd(self.input_weight, "input_weight", m)
        if not self.coercivity_floor > 0:
            raise ValidationError("coercivity_floor must be positive",
                                  module=_MODULE, operation="GenLQProblem")

        ktk = k.T @ k
        eig = linalg.eigh(0.5 * (ktk + ktk.T), r, eigvals_only=True)
        if eig[0] < self.coercivity_floor * max(eig[-1], np.finfo(float).tiny):
            raise CoercivityError(
                f"K*K is not coercive: smallest eigenvalue {eig[0]:.3e} "
                f"below floor {self.coercivity_floor:.1e} x {eig[-1]:.3e}",
                module=_MODULE, operation="GenLQProblem")

        for name, arr in (("a", a), ("b", b), ("c", c), ("k", k), ("z", z),
                          ("v", v), ("state_weight", w), ("input_weight", r)):
            object.__setattr__(self, name, _readonly(arr))

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    @property
    def p(self):
        return self.c.shape[0]

    # Euclidean covector data; every solver works with these.

    @cached_property
    def q_form(self):
        """``C^T C``."""
        return _readonly(self.c.T @ self.c)

    @cached_property
    def r_form(self):
        """``K^T K`` (symmetric positive definite)."""
        ktk = self.k.T @ self.k
        return _readonly(0.5 * (ktk + ktk.T))

    @cached_property
    def r_form_cho(self):
        return linalg.cho_factor(self.r_form)

    @cached_property
    def z_cov(self):
        return _readonly(self.state_weight @ self.z)

    @cached_property
    def v_cov(self):
        return _readonly(self.input_weight @ self.v)

    @cached_property
    def gain_map(self):
        """``(K^T K)^-1 B^T``; feedback gains are ``gain_map @ Pi``."""
        return _readonly(linalg.cho_solve(self.r_form_cho, self.b.T))

    @cached_property
    def s_form(self):
        """``B (K^T K)^-1 B^T``."""
        s = self.b @ self.gain_map
        return _readonly(0.5 * (s + s.T))

    @cached_property
    def state_cho(self):
        return _readonly(np.linalg.cholesky(self.state_weight))

    @cached_property
    def input_cho(self):
        return _readonly(np.linalg.cholesky(self.input_weight))

    def replace(self, **changes):
        fields = dict(a=self.a, b=self.b, c=self.c, k=self.k, z=self.z, v=self.v,
                      state_weight=self.state_weight, input_weight=self.input_weight,
                      coercivity_floor=self.coercivity_floor)
        fields.update(changes)
        return GenLQProblem(**fields)


@dataclass(frozen=True, eq=False)
class OcpInstance:
    """A problem together with horizon ``T``, initial state and time step."""

    problem: GenLQProblem
    horizon: float
    x0: np.ndarray
    dt: float

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt}",
                                  module=_MODULE, operation="OcpInstance")
        if not (np.isfinite(self.horizon) and self.horizon >= self.dt):
            raise ValidationError(f"horizon must be >= dt, got {self.horizon}",
                                  module=_MODULE, operation="OcpInstance")
        steps = int(round(self.horizon / self.dt))
        if abs(steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValidationError("horizon must be an integer multiple of dt",
                                  module=_MODULE, operation="OcpInstance")
        x0 = _vector(self.x0, "x0", self.problem.n, op="OcpInstance")
        object.__setattr__(self, "x0", _readonly(x0))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def grid(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def with_horizon(self, horizon):
        return OcpInstance(self.problem, horizon, self.x0, self.dt)

    def with_x0(self, x0):
        return OcpInstance(self.problem, self.horizon, x0, self.dt)


def _check_len(arr, size, name, op):
    arr = np.asarray(arr, dtype=float)
    if arr.shape[0] != size:
        raise DimensionError(f"{name} must have length {size}, got {arr.shape[0]}",
                             field=name, module=_MODULE, operation=op)
    return arr


def running_cost(problem, x, u):
    """Evaluate ``|Cx|^2 + |Ku|^2 + 2<z,x> + 2<v,u>``.

    ``x`` and ``u`` may also be 2-D with one column per sample, in which
    case an array of costs is returned.
    """
    x = _check_len(x, problem.n, "x", "running_cost")
    u = _check_len(u, problem.m, "u", "running_cost")
    cx = problem.c @ x
    ku = problem.k @ u
    val = (np.sum(cx * cx, axis=0) + np.sum(ku * ku, axis=0)
           + 2.0 * (problem.z_cov @ x) + 2.0 * (problem.v_cov @ u))
    return float(val) if np.ndim(val) == 0 else val


def adjoint(problem, which):
    """Adjoint of ``A``, ``B`` or ``C`` with respect to the weighted products."""
    which = which.upper()
    w = problem.state_weight
    if which == "A":
        return np.linalg.solve(w, problem.a.T @ w)
    if which == "B":
        return np.linalg.solve(problem.input_weight, problem.b.T @ w)
    if which == "C":
        return np.linalg.solve(w, problem.c.T)
    raise ValidationError(f"unknown operator {which!r}; expected A, B or C",
                          module=_MODULE, operation="adjoint")


def state_norm(problem, x):
    """Norm in the state inner product; columns are separate vectors."""
    x = np.asarray(x, dtype=float)
    lx = problem.state_cho.T @ x
    return np.sqrt(np.sum(lx * lx, axis=0))


def input_norm(problem, u):
    u = np.asarray(u, dtype=float)
    lu = problem.input_cho.T @ u
    return np.sqrt(np.sum(lu * lu, axis=0))


def equilibrium_residual(problem, x, u):
    """``|Ax + Bu|`` in the state norm; zero iff ``(x, u)`` is an equilibrium."""
    x = _check_len(x, problem.n, "x", "equilibrium_residual")
    u = _check_len(u, problem.m, "u", "equilibrium_residual")
    return float(state_norm(problem, problem.a @ x + problem.b @ u))


# JSON serialization -------------------------------------------------------

_PROBLEM_KEYS = ("a", "b", "c", "k", "z", "v", "state_weight", "input_weight")


def problem_from_dict(data):
    if not isinstance(data, dict):
        raise ValidationError("problem document must be a JSON object",
                              module=_MODULE, operation="problem_from_dict")
    missing = [key for key in ("a", "b", "c", "k") if key not in data]
    if missing:
        raise ValidationError(f"problem document lacks keys {missing}",
                              module=_MODULE, operation="problem_from_dict")
    kwargs = {key: data.get(key) for key in _PROBLEM_KEYS}
    if "coercivity_floor" in data:
        kwargs["coercivity_floor"] = float(data["coercivity_floor"])
    try:
        return GenLQProblem(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed problem document: {exc}",
                              module=_MODULE, operation="problem_from_dict") from exc


def problem_to_dict(problem):
    return {key: getattr(problem, key).tolist() for key in _PROBLEM_KEYS}


def instance_from_dict(data):
    problem = problem_from_dict(data)
    missing = [key for key in ("horizon", "x0", "dt") if key not in data]
    if missing:
        raise ValidationError(f"instance document lacks keys {missing}",
                              module=_MODULE, operation="instance_from_dict")
    try:
        return OcpInstance(problem, float(data["horizon"]), data["x0"], float(data["dt"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed instance document: {exc}",
                              module=_MODULE, operation="instance_from_dict") from exc


def instance_to_dict(instance):
    out = problem_to_dict(instance.problem)
    out.update(horizon=instance.horizon, x0=instance.x0.tolist(), dt=instance.dt)
    return out


def load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}",
                              module=_MODULE, operation="load_json") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}",
                              module=_MODULE, operation="load_json") from exc
