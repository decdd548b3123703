"""Example systems: discretized heat and string equations, the truncated
adjoint counterexample family, and seeded random problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationExhausted, ValidationError
from .lti_core import GenLQProblem

__all__ = [
    "ModelSpec",
    "build",
    "build_heat",
    "build_string",
    "build_appendix_b",
    "build_random",
    "interior_nodes",
]

_MODULE = "models"


def _fail(msg, op):
    raise ValidationError(msg, module=_MODULE, operation=op)


def interior_nodes(n):
    """Interior nodes ``i h`` of the uniform grid on ``[0, 1]`` with ``h = 1/(n+1)``."""
    h = 1.0 / (n + 1)
    return h * np.arange(1, n + 1), h


def _overlap(n, lo, hi):
    """Length of ``[lo, hi]`` intersected with each dual cell ``[x_i - h/2, x_i + h/2]``."""
    x, h = interior_nodes(n)
    left = np.maximum(x - h / 2, lo)
    right = np.minimum(x + h / 2, hi)
    return np.clip(right - left, 0.0, None), h


def _second_difference(n, h):
    return (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1)
            + np.diag(np.ones(n - 1), -1)) / h ** 2


def build_heat(n=20, x0_center=0.3, eps=0.05, x1_center=0.7, ups=0.05, y0=1.0):
    """Heat equation on the unit interval with Dirichlet ends.

    Actuation averages over ``[x0_center - eps, x0_center + eps]`` and the
    sensor measures the mean over ``[x1_center - ups, x1_center + ups]``;
    the cost is ``|y - y0|^2 + |u|^2`` expanded without the constant term.
    """
    op = "build_heat"
    if int(n) != n or n < 2:
        _fail(f"n must be an integer >= 2, got {n}", op)
    n = int(n)
    for center, half, name in ((x0_center, eps, "actuator"), (x1_center, ups, "sensor")):
        if not half > 0:
            _fail(f"{name} half-width must be positive", op)
        if not (0.0 < center - half and center + half < 1.0):
            _fail(f"{name} support [{center - half}, {center + half}] must lie in (0, 1)", op)
    if not np.isfinite(y0):
        _fail("y0 must be finite", op)

    act, h = _overlap(n, x0_center - eps, x0_center + eps)
    sens, _ = _overlap(n, x1_center - ups, x1_center + ups)
    a = _second_difference(n, h)
    b = (act / (2.0 * eps * h))[:, None]
    c = (sens / (2.0 * ups))[None, :]
    w = h * np.eye(n)
    # |Cx - y0|^2 = |Cx|^2 - 2 y0 Cx + const, and 2<z, x>_W = 2 z^T W x.
    z = -float(y0) * c.ravel() / h
    return GenLQProblem(a=a, b=b, c=c, k=np.eye(1), z=z, v=np.zeros(1),
                        state_weight=w, input_weight=np.eye(1))


def build_string(n=20, xi=0.2, eta=0.8, u0=1.0):
    """Vibrating string with control distributed on ``[xi, eta]``.

    The state stacks interior displacements and velocities (dimension
    ``2n``) and carries the discrete energy inner product, so ``A`` is
    skew-adjoint.  One input per interior node; ``u0`` may be a scalar, an
    array of node values or a callable of the node positions.
    """
    op = "build_string"
    if int(n) != n or n < 2:
        _fail(f"n must be an integer >= 2, got {n}", op)
    n = int(n)
    if not (0.0 <= xi < eta <= 1.0):
        _fail(f"need 0 <= xi < eta <= 1, got xi={xi}, eta={eta}", op)
    x, h = interior_nodes(n)
    if callable(u0):
        target = np.asarray(u0(x), dtype=float).reshape(-1)
    else:
        try:
            target = np.broadcast_to(np.asarray(u0, dtype=float), (n,)).copy()
        except ValueError:
            _fail(f"u0 must broadcast to the {n} interior nodes", op)
    if target.shape != (n,) or not np.all(np.isfinite(target)):
        _fail("u0 must be finite and broadcast to the n interior nodes", op)

    frac, _ = _overlap(n, xi, eta)
    frac = frac / h
    lap = _second_difference(n, h)
    zero, eye = np.zeros((n, n)), np.eye(n)
    a = np.block([[zero, eye], [lap, zero]])
    b = np.vstack([zero, np.diag(frac)])
    sqh = np.sqrt(h)
    c = np.hstack([zero, sqh * eye])
    w = np.block([[-h * lap, zero], [zero, h * eye]])
    # |u - u0|^2_{L2} = h|u|^2 - 2 h u0.u + const with input Gram h I, so
    # K = sqrt(h) I and v = -u0 in that product.
    return GenLQProblem(a=a, b=b, c=c, k=sqh * eye, z=np.zeros(2 * n), v=-target,
                        state_weight=w, input_weight=h * eye)


def build_appendix_b(n=8):
    """Truncation of the family ``A = 0``, ``C = K = I``, ``B = diag(1/j)``,
    ``v_j = 1/sqrt(j)``, ``z = 0``; its adjoint steady state is ``sqrt(j)``."""
    if int(n) != n or n < 1:
        _fail(f"n must be an integer >= 1, got {n}", "build_appendix_b")
    n = int(n)
    j = np.arange(1, n + 1, dtype=float)
    return GenLQProblem(a=np.zeros((n, n)), b=np.diag(1.0 / j), c=np.eye(n), k=np.eye(n),
                        z=np.zeros(n), v=1.0 / np.sqrt(j))


def _random_spd(rng, n, spread=0.5):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.exp(spread * rng.uniform(-1.0, 1.0, n))) @ q.T


def build_random(n=4, m=2, p=2, seed=0, ensure=("stabilizable", "detectable"),
                 abscissa=0.5, weighted=False, max_tries=1000):
    """Seeded random problem.

    ``A`` has i.i.d. normal entries scaled by ``1/sqrt(n)`` and is shifted so
    that its spectral abscissa equals ``abscissa``.  ``K = I + 0.1 X^T X / m``.
    With ``weighted=True`` the state and input Gram matrices are random SPD
    matrices instead of identities.  Draws are rejected until the Hautus
    properties named in ``ensure`` hold.
    """
    from .structural import hautus_detectable, hautus_stabilizable

    op = "build_random"
    if min(n, m, p) < 1:
        _fail("dimensions must be >= 1", op)
    ensure = set(ensure or ())
    unknown = ensure - {"stabilizable", "detectable"}
    if unknown:
        _fail(f"unknown ensure flags {sorted(unknown)}", op)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        a = rng.standard_normal((n, n)) / np.sqrt(n)
        a -= (np.max(np.linalg.eigvals(a).real) - abscissa) * np.eye(n)
        b = rng.standard_normal((n, m))
        c = rng.standard_normal((p, n))
        x = rng.standard_normal((m, m))
        k = np.eye(m) + 0.1 * x.T @ x / m
        z = rng.standard_normal(n)
        v = rng.standard_normal(m)
        w = _random_spd(rng, n) if weighted else None
        r = _random_spd(rng, m) if weighted else None
        prob = GenLQProblem(a=a, b=b, c=c, k=k, z=z, v=v, state_weight=w, input_weight=r)
        if "stabilizable" in ensure and not hautus_stabilizable(prob):
            continue
        if "detectable" in ensure and not hautus_detectable(prob):
            continue
        return prob
    raise GenerationExhausted(f"no admissible draw in {max_tries} attempts",
                              module=_MODULE, operation=op)


@dataclass
class ModelSpec:
    """Named model with its construction parameters."""

    name: str
    params: dict = field(default_factory=dict)

    def build(self):
        return build(self.name, **self.params)


_BUILDERS = {
    "heat": build_heat,
    "string": build_string,
    "appendix_b": build_appendix_b,
    "random": build_random,
}


def build(name, **params):
    try:
        builder = _BUILDERS[name]
    except KeyError:
        _fail(f"unknown model {name!r}; choose from {sorted(_BUILDERS)}", "build")
    try:
        return builder(**params)
    except TypeError as exc:
        _fail(f"bad parameters for {name}: {exc}", "build")
