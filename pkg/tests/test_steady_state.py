import numpy as np
import pytest
from hypothesis import given, strategies as st

from turnpike_lab import GenLQProblem, SingularKKT, ValidationError, running_cost
from turnpike_lab.models import build_appendix_b, build_heat, build_random, build_string
from turnpike_lab.steady_state import (counterexample_scan, null_space_basis, shift_problem,
                                       solve_adjoint_steady, solve_ossp, steady_state)
from turnpike_lab.structural import hautus_stabilizable

from conftest import scalar

BUNDLED = [lambda: build_heat(20), lambda: build_heat(30, y0=2.0), lambda: build_string(20),
           lambda: build_appendix_b(8), lambda: build_random(6, 2, 2, seed=0),
           lambda: build_random(5, 1, 3, seed=4, weighted=True)]


def test_zero_linear_terms_give_origin(rng):
    prob = build_random(4, 2, 2, seed=2).replace(z=np.zeros(4), v=np.zeros(2))
    st_ = steady_state(prob)
    assert np.abs(st_.x_e).max() < 1e-14 and np.abs(st_.u_e).max() < 1e-14
    assert np.abs(st_.w).max() < 1e-14 and st_.w_residual < 1e-14


def test_scalar_tracking(tracking_problem):
    st_ = steady_state(tracking_problem)
    assert st_.x_e[0] == pytest.approx(0.5, abs=1e-14)
    assert st_.u_e[0] == pytest.approx(0.5, abs=1e-14)
    assert st_.w[0] == pytest.approx(0.5, abs=1e-14)


def test_appendix_b_adjoint():
    for n in (1, 4, 8, 16):
        st_ = steady_state(build_appendix_b(n))
        assert np.abs(st_.x_e).max() < 1e-14 and np.abs(st_.u_e).max() < 1e-14
        np.testing.assert_allclose(st_.w, np.sqrt(np.arange(1, n + 1)), rtol=1e-12)
        assert st_.w @ st_.w == pytest.approx(n * (n + 1) / 2, rel=1e-12)


def test_counterexample_scan():
    rows = counterexample_scan(16, step=4)
    assert [r.N for r in rows] == [4, 8, 12, 16]
    assert rows[0].w_norm ** 2 == pytest.approx(10.0, rel=1e-12)
    norms = [r.w_norm for r in rows]
    assert all(b > a for a, b in zip(norms, norms[1:]))
    with pytest.raises(ValidationError):
        counterexample_scan(1)


def test_counterexample_ratio():
    rows = {r.N: r for r in counterexample_scan(128, step=64)}
    assert rows[128].w_norm / rows[64].w_norm == pytest.approx(1.992, abs=0.02)


@pytest.mark.parametrize("make", BUNDLED)
def test_residual_certificates(make):
    prob = make()
    st_ = steady_state(prob)
    assert st_.projection_residual <= 1e-8
    assert st_.equilibrium_residual <= 1e-9 * (1 + np.linalg.norm(st_.x_e) + np.linalg.norm(st_.u_e))
    if hautus_stabilizable(prob):
        assert st_.w_residual <= 1e-7 * st_.w_scale
        assert not st_.existence_uncertain


@pytest.mark.parametrize("make", BUNDLED)
def test_minimality_against_feasible_pairs(make, rng):
    prob = make()
    st_ = solve_ossp(prob)
    basis = null_space_basis(prob)
    best = running_cost(prob, st_.x_e, st_.u_e)
    ref = np.concatenate([st_.x_e, st_.u_e])
    scale = 1 + np.abs(ref).max()
    for _ in range(100):
        pair = ref + scale * basis @ rng.standard_normal(basis.shape[1])
        val = running_cost(prob, pair[:prob.n], pair[prob.n:])
        assert val >= best - 1e-9 * (1 + abs(best))


def test_null_space_basis_orthonormal_in_product():
    prob = build_random(4, 2, 2, seed=3, weighted=True)
    basis = null_space_basis(prob)
    from scipy.linalg import block_diag
    gram = block_diag(prob.state_weight, prob.input_weight)
    np.testing.assert_allclose(basis.T @ gram @ basis, np.eye(basis.shape[1]), atol=1e-12)
    np.testing.assert_allclose(np.hstack([prob.a, prob.b]) @ basis, 0, atol=1e-12)


def test_shift_problem_examples(tracking_problem):
    st_ = solve_ossp(tracking_problem)
    shifted = shift_problem(tracking_problem, st_)
    assert shifted.z[0] == pytest.approx(-0.5, abs=1e-14)
    assert shifted.v[0] == pytest.approx(0.5, abs=1e-14)
    again = solve_ossp(shifted)
    assert abs(again.x_e[0]) <= 1e-9 and abs(again.u_e[0]) <= 1e-9
    zero = build_random(3, 1, 1, seed=0).replace(z=np.zeros(3), v=np.zeros(1))
    same = shift_problem(zero, solve_ossp(zero))
    np.testing.assert_allclose(same.z, 0, atol=1e-15)


@given(st.integers(0, 400))
def test_shift_round_trip_property(seed):
    prob = build_random(4, 2, 2, seed=seed, weighted=seed % 2 == 0)
    st_ = solve_ossp(prob)
    back = solve_ossp(shift_problem(prob, st_))
    assert np.abs(back.x_e).max() <= 1e-9 * (1 + np.abs(st_.x_e).max())
    assert np.abs(back.u_e).max() <= 1e-9 * (1 + np.abs(st_.u_e).max())


def test_singular_kkt():
    # C = 0 and A = 0: x is undetermined by the steady-state problem
    prob = GenLQProblem(a=np.zeros((2, 2)), b=np.array([[1.0], [0.0]]), c=np.zeros((1, 2)),
                        k=[[1.0]])
    with pytest.raises(SingularKKT) as info:
        solve_ossp(prob)
    assert "steady_state.solve_ossp" in str(info.value)


def test_existence_flag_when_not_stabilizable():
    prob = GenLQProblem(a=np.diag([1.0, -1.0]), b=np.array([[0.0], [1.0]]), c=np.eye(2),
                        k=[[1.0]], z=[1.0, 1.0])
    st_ = steady_state(prob)
    assert st_.existence_uncertain


def test_to_dict_keys(tracking_problem):
    data = steady_state(tracking_problem).to_dict()
    assert data["w_norm_squared"] == pytest.approx(0.25)
    assert set(data) >= {"x_e", "u_e", "w", "w_residual", "projection_residual"}
