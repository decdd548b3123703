import numpy as np
import pytest
from hypothesis import given, strategies as st

from turnpike_lab import (GenLQProblem, InsufficientDecay, NotStabilizable, StepSizeTooLarge,
                          ValidationError)
from turnpike_lab.models import build_heat, build_random
from turnpike_lab.riccati import (are_residual, deviation_problem, fit_decay, integrate_dre,
                                  loewner_slack, newton_kleinman, solve_are, solve_riccati)
from turnpike_lab.riccati import _warm_start

from conftest import scalar


def test_dre_matches_tanh(tanh_problem):
    sol = integrate_dre(tanh_problem, 5.0, dt=1e-3)
    assert np.abs(sol.p_samples[:, 0, 0] - np.tanh(sol.grid)).max() <= 1e-8
    assert sol.p_samples[1000, 0, 0] == pytest.approx(0.7615942, abs=1e-7)


def test_dre_tail_bound(tanh_problem):
    sol = integrate_dre(tanh_problem, 5.0, dt=1e-3)
    assert np.all(1.0 - sol.p_samples[:, 0, 0] <= 2.0 * np.exp(-2.0 * sol.grid) + 1e-12)


def test_dre_zero_output_stays_zero(rng):
    prob = GenLQProblem(a=rng.standard_normal((3, 3)), b=rng.standard_normal((3, 1)),
                        c=np.zeros((1, 3)), k=[[1.0]])
    sol = integrate_dre(prob, 1.0, dt=1e-2)
    assert np.abs(sol.p_samples).max() == 0.0


def test_dre_fourth_order(tanh_problem):
    errs = []
    dts = [0.2, 0.1, 0.05]
    for dt in dts:
        sol = integrate_dre(tanh_problem, 2.0, dt=dt, rtol=np.inf)
        errs.append(abs(sol.p_samples[-1, 0, 0] - np.tanh(2.0)))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 3.5 <= slope <= 4.5


def test_dre_richardson_guard(tanh_problem):
    with pytest.raises(StepSizeTooLarge) as info:
        integrate_dre(tanh_problem, 2.0, dt=0.5, rtol=1e-12)
    assert "riccati.integrate_dre" in str(info.value)


def test_dre_rejects_bad_p0(tanh_problem):
    with pytest.raises(ValidationError):
        integrate_dre(tanh_problem, 1.0, p0=[[-1.0]])
    with pytest.raises(ValidationError):
        integrate_dre(GenLQProblem(a=np.eye(2), b=np.eye(2), c=np.eye(2), k=np.eye(2)), 1.0,
                      p0=[[0.0, 1.0], [0.0, 0.0]])


@given(st.integers(0, 200))
def test_dre_invariants(seed):
    prob = build_random(4, 2, 2, seed=seed, weighted=seed % 2 == 1)
    sol = integrate_dre(prob, 2.0, dt=5e-3)
    p_min, _ = solve_are(prob)
    ops = np.array([sol.operator(i) for i in range(len(sol.grid))])
    w = prob.state_weight
    # symmetric in the weighted product: W P symmetric
    assert np.abs(sol.p_samples - np.swapaxes(sol.p_samples, 1, 2)).max() <= 1e-10
    assert min(np.linalg.eigvalsh(p)[0] for p in sol.p_samples) >= -1e-10
    assert loewner_slack(sol) >= -1e-8
    from scipy import linalg
    for pi in sol.p_samples[::40]:
        assert linalg.eigh(p_min - pi, w, eigvals_only=True)[0] >= -1e-8
    assert np.all(np.isfinite(ops))


def test_dre_weak_form(rng):
    prob = build_random(3, 1, 2, seed=9, weighted=True)
    dt = 1e-3
    sol = integrate_dre(prob, 1.0, dt=dt)
    w = prob.state_weight
    a, b = prob.a, prob.b
    from turnpike_lab.lti_core import adjoint
    b_star = adjoint(prob, "B")
    r = prob.input_weight
    for i in (100, 500, 900):
        p = sol.operator(i)
        dp = (sol.operator(i + 1) - sol.operator(i - 1)) / (2 * dt)
        x, y = rng.standard_normal(3), rng.standard_normal(3)
        lhs = x @ w @ (dp @ y)
        kk = np.linalg.solve(r, prob.k.T @ prob.k)
        rhs = ((p @ x) @ w @ (a @ y) + (p @ a @ x) @ w @ y
               - (np.linalg.solve(kk, b_star @ p @ x)) @ r @ (b_star @ p @ y)
               + (prob.c @ x) @ (prob.c @ y))
        assert abs(lhs - rhs) <= 1e-4 * (1 + abs(lhs))


@pytest.mark.parametrize("a,expected", [(0.0, 1.0), (1.0, 1 + np.sqrt(2))])
def test_are_scalar(a, expected):
    p, res = solve_are(scalar(a=a))
    assert p[0, 0] == pytest.approx(expected, abs=1e-10)
    assert res <= 1e-12


def test_are_double_integrator():
    prob = GenLQProblem(a=[[0, 1], [0, 0]], b=[[0], [1]], c=np.eye(2), k=[[1]])
    p, _ = solve_are(prob)
    np.testing.assert_allclose(p, [[np.sqrt(3), 1], [1, np.sqrt(3)]], atol=1e-8)


def test_are_not_stabilizable():
    with pytest.raises(NotStabilizable):
        solve_are(scalar(a=1.0, b=0.0))


@given(st.integers(0, 300))
def test_are_closed_loop_hurwitz_and_newton_monotone(seed):
    prob = build_random(5, 2, 2, seed=seed, weighted=seed % 3 == 0)
    p, res, hist = solve_are(prob, return_history=True)
    acl = prob.a - prob.b @ (prob.gain_map @ p)
    assert np.max(np.linalg.eigvals(acl).real) < 0
    assert res <= 1e-8 * (1 + np.linalg.norm(prob.q_form))
    # below eps times the size of the residual's terms the history is roundoff
    size = (np.linalg.norm(prob.q_form) + 2 * np.linalg.norm(prob.a) * np.linalg.norm(p)
            + np.linalg.norm(prob.b @ prob.gain_map) * np.linalg.norm(p) ** 2)
    tail = hist[1:]
    for prev, cur in zip(tail, tail[1:]):
        if prev > 1e-15 * size:
            assert cur < prev


def test_newton_recovers_from_overshooting_start():
    prob = build_random(6, 2, 2, seed=68)
    p, hist = newton_kleinman(prob, _warm_start(prob))
    assert max(hist) > 1e3 * hist[0]
    assert are_residual(prob, p) < 1e-10


def test_fit_decay_scalar_rate(tanh_problem):
    sol = integrate_dre(tanh_problem, 8.0, dt=1e-3)
    p_min, _ = solve_are(tanh_problem)
    from dataclasses import replace
    fit = fit_decay(replace(sol, p_min=p_min))
    assert 1.8 <= fit.beta <= 2.2
    dist = np.abs(sol.p_samples[:, 0, 0] - 1.0)
    assert np.all(dist <= fit.M * np.exp(-fit.beta * sol.grid) * (1 + 1e-12))


def test_fit_decay_at_fixed_point(tanh_problem):
    from dataclasses import replace
    sol = integrate_dre(tanh_problem, 2.0, p0=[[1.0]], dt=1e-2)
    with pytest.raises(InsufficientDecay):
        fit_decay(replace(sol, p_min=np.eye(1)))


def test_solve_riccati_heat():
    sol = solve_riccati(build_heat(20))
    assert sol.decay_fit.beta > 0 and sol.decay_fit.r_squared >= 0.99
    assert loewner_slack(sol) >= -1e-8
    dist = sol.distance_to_min()
    assert np.all(dist <= sol.decay_fit.M * np.exp(-sol.decay_fit.beta * sol.grid) * (1 + 1e-12))


def test_strong_convergence_past_knee():
    sol = solve_riccati(build_random(4, 2, 2, seed=1))
    dist = sol.distance_to_min()
    n = len(dist) - 1
    assert dist[n] < dist[n // 2]


def test_deviation_form_matches_direct(rng):
    prob = build_random(3, 1, 1, seed=5)
    p_min, _ = solve_are(prob)
    direct = integrate_dre(prob, 3.0, dt=1e-3)
    dev = integrate_dre(prob, 3.0, dt=1e-3, reference=p_min)
    np.testing.assert_allclose(dev.p_samples, direct.p_samples, atol=1e-9 * np.abs(p_min).max())
    np.testing.assert_allclose(dev.deviation, direct.p_samples - p_min,
                               atol=1e-9 * np.abs(p_min).max())
    dprob = deviation_problem(prob, p_min)
    assert np.max(np.linalg.eigvals(dprob.a).real) < 0
