import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bwopt.freq import FrequencyGrid
from bwopt.nsopt import (
    DirectionMode,
    Evaluation,
    Point,
    SolverConfig,
    SolverState,
    Status,
    bfgs_update,
    check_stationarity,
    penalty_qp,
    reduce_set,
    solve,
    steering_qp,
    weak_wolfe,
)
from bwopt.plants import PlantKind, PlantRecipe, flexstage_initial_params, flexstage_structure, make_plant
from bwopt.problem import BandwidthProblem, ToyMaxProblem


class Quadratic:
    """Smooth ``f = |x - a|^2 / 2`` with an optional unstable region ``x_0 > wall``."""

    n_constraints = 0

    def __init__(self, a, wall=math.inf):
        self.a = np.asarray(a, float)
        self.n_vars = self.a.size
        self.wall = wall
        self.calls = []

    def evaluate(self, x):
        self.calls.append(np.array(x))
        if x[0] > self.wall:
            return Evaluation.unstable(self.n_vars, 0)
        r = x - self.a
        return Evaluation(0.5 * float(r @ r), r[None, :], np.zeros(0), ())


def test_weak_wolfe_on_quadratic():
    # phi(a) = (1 - a)^2: a = 1 satisfies both conditions at once
    fun = lambda a: ((1 - a) ** 2, -2 * (1 - a), a)
    alpha, payload, calls = weak_wolfe(fun, 1.0, -2.0)
    assert alpha == 1.0 and calls == 1


def test_weak_wolfe_on_kink():
    # phi(a) = |1 - a|: the Armijo point must lie in (0, 2), the curvature test at a >= 1
    fun = lambda a: (abs(1 - a), -1.0 if a < 1 else 1.0, a)
    alpha, _, _ = weak_wolfe(fun, 1.0, -1.0, alpha0=8.0)
    assert 1.0 <= alpha < 2.0


def test_weak_wolfe_expands_short_steps():
    fun = lambda a: ((10 - a) ** 2 - 100, -2 * (10 - a), a)
    alpha, _, calls = weak_wolfe(fun, 0.0, -20.0, alpha0=1.0)
    assert alpha >= 4.0 and calls > 1


def test_weak_wolfe_no_descent_returns_none():
    alpha, payload, calls = weak_wolfe(lambda a: (a, 1.0, None), 0.0, -1.0, max_bisections=10)
    assert alpha is None and calls == 11


def test_weak_wolfe_treats_nonfinite_as_failure():
    fun = lambda a: ((math.inf, math.nan, None) if a > 0.3 else ((1 - a) ** 2, -2 * (1 - a), a))
    alpha, payload, _ = weak_wolfe(fun, 1.0, -2.0)
    assert alpha is not None and alpha <= 0.3


def test_line_search_never_accepts_unstable_point():
    prob = Quadratic([5.0, 0.0], wall=1.0)
    res = solve(prob, np.zeros(2), SolverConfig(max_iter=20))
    stable_calls = [x for x in prob.calls if x[0] <= 1.0]
    assert res.x[0] <= 1.0
    assert any(x[0] > 1.0 for x in prob.calls)  # the wall was probed and rejected
    assert len(stable_calls) < len(prob.calls)


def test_smooth_quadratic_converges():
    res = solve(Quadratic([1.0, -2.0, 3.0]), np.zeros(3))
    assert res.status is Status.CONVERGED
    np.testing.assert_allclose(res.x, [1.0, -2.0, 3.0], atol=1e-6)


def test_steering_is_noop_when_feasible():
    F = np.array([[1.0, 2.0]])
    d, red, mu = steering_qp(0.7, F, np.array([-1.0]), (np.array([[0.0, 1.0]]),), np.eye(2), 0.7, 0.3)
    assert mu == 0.7 and red == 0.0
    np.testing.assert_allclose(d, -0.7 * F[0], atol=1e-12)


def test_steering_shrinks_mu_on_conflict():
    # objective pushes x1 up, the violated constraint pushes it down
    F, c, C = np.array([[-10.0, 0.0]]), np.array([0.5]), (np.array([[1.0, 0.0]]),)
    d, red, mu = steering_qp(1.0, F, c, C, np.eye(2), 0.7, 0.3)
    assert mu < 1.0
    red0 = 0.5 - max(0.5 + penalty_qp(0.0, F, c, C, np.eye(2))[0], 0.0)
    assert red >= 0.7 * red0


def test_penalty_qp_feasibility_direction():
    # mu = 0: the step that just zeroes the linearized violation
    d = penalty_qp(0.0, np.array([[1.0, 0.0]]), np.array([2.0]), (np.array([[1.0, 1.0]]),), np.eye(2))
    assert 2.0 + d.sum() == pytest.approx(0.0, abs=1e-8)


def test_penalty_qp_unconstrained_is_min_norm():
    F = np.array([[1.0, 0.0], [0.0, 1.0]])
    d = penalty_qp(2.0, F, np.zeros(0), (), np.eye(2))
    np.testing.assert_allclose(d, [-1.0, -1.0], atol=1e-12)


def _state_with(points, mu=1.0):
    cache = deque(points)
    return SolverState(points[-1], np.eye(points[-1].x.size), mu, cache, [])


def _point(x, g, c=(), J=()):
    ev = Evaluation(0.0, np.atleast_2d(g), np.array(c, float), tuple(np.atleast_2d(j) for j in J))
    return Point(np.array(x, float), ev, ev.f_set, ev.c_sets)


def test_stationarity_opposite_gradients_cancel():
    pts = [_point([0.0, 0.0], [1.0, 2.0]), _point([1e-6, 0.0], [-1.0, -2.0])]
    done, norm = check_stationarity(_state_with(pts), SolverConfig())
    assert done and norm < 1e-12


def test_stationarity_single_gradient_is_its_norm():
    pts = [_point([0.0, 0.0], [3.0, 4.0])]
    done, norm = check_stationarity(_state_with(pts, mu=0.5), SolverConfig())
    assert not done and norm == pytest.approx(2.5)


def test_stationarity_ignores_far_points():
    pts = [_point([1.0, 0.0], [-1.0, -2.0]), _point([0.0, 0.0], [1.0, 2.0])]
    _, norm = check_stationarity(_state_with(pts), SolverConfig())
    assert norm == pytest.approx(math.sqrt(5))


def test_stationarity_at_active_constraint():
    # min x subject to -x <= 0 at x = 0: mu g + t h = 0 for t = mu
    pts = [_point([0.0], [1.0], c=[0.0], J=[[-1.0]])]
    done, norm = check_stationarity(_state_with(pts, mu=0.3), SolverConfig())
    assert done and norm < 1e-12


@given(arrays(float, (6, 3), elements=st.floats(-3, 3, allow_subnormal=False)))
def test_bfgs_stays_positive_definite(steps):
    H = np.eye(3)
    A = np.diag([1.0, 10.0, 100.0])
    for k in range(0, 6, 2):
        s = steps[k]
        H, _ = bfgs_update(H, s, A @ s + 0.1 * steps[k + 1], scale_first=(k == 0))
        assert np.linalg.eigvalsh(H)[0] > 0
        np.testing.assert_allclose(H, H.T)


def test_bfgs_secant_condition():
    s, y = np.array([1.0, 2.0]), np.array([3.0, 1.0])
    H, updated = bfgs_update(np.eye(2), s, y)
    assert updated
    np.testing.assert_allclose(H @ y, s)


def test_bfgs_skips_negative_curvature():
    H, updated = bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert not updated and np.array_equal(H, np.eye(2))


def test_reduce_set_modes():
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(reduce_set(V, DirectionMode.RAW_SUBGRADIENT), [1.0, 0.0])
    np.testing.assert_allclose(reduce_set(V, DirectionMode.QP_STEEPEST), [0.5, 0.5])


@pytest.mark.parametrize("mode", ["raw", "qp", "RAW_SUBGRADIENT", DirectionMode.QP_STEEPEST])
def test_direction_mode_parse(mode):
    assert isinstance(DirectionMode.parse(mode), DirectionMode)


@pytest.mark.parametrize("kw", [dict(S_max=1.0), dict(c_v=1.0), dict(c_mu=0.0), dict(wolfe_c1=0.6),
                                dict(mu0=0.0), dict(max_fun_evals=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_toy_converges_and_is_deterministic():
    cfg = SolverConfig(mu0=1.0)
    a = solve(ToyMaxProblem(), np.array([2.0, -1.0]), cfg)
    b = solve(ToyMaxProblem(), np.array([2.0, -1.0]), cfg)
    assert a.status is Status.CONVERGED
    assert abs(a.f - 0.5) < 1e-5
    assert np.array_equal(a.x, b.x) and a.history == b.history


def test_initial_unstable_point_reported():
    res = solve(Quadratic([0.0], wall=-1.0), np.zeros(1))
    assert res.status is Status.INITIAL_UNSTABLE


def test_budget_exhaustion():
    res = solve(ToyMaxProblem(), np.array([2.0, -1.0]), SolverConfig(max_iter=1))
    assert res.status is Status.NOT_CONVERGED_BUDGET and res.iterations == 1


@pytest.mark.slow
def test_tight_bound_drives_mu_down():
    # the start violates ||S|| <= 1.05 by a wide margin, so steering has to trade off bandwidth
    plant = make_plant(PlantRecipe(PlantKind.FLEXSTAGE_LIKE))
    params = flexstage_initial_params(flexstage_structure(False))
    cfg = SolverConfig(S_max=1.05, mu0=0.00265, max_iter=3)
    prob = BandwidthProblem(plant, params.structure, params.scaling, cfg, FrequencyGrid(1e-1, 1e5, 800))
    res = solve(prob, params.scaled_theta(), cfg)
    mus = [h.mu for h in res.history]
    assert mus[-1] < mus[0]
    assert all(b <= a for a, b in zip(mus, mus[1:]))
    assert res.history[-1].v < res.history[0].v
