import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mgdamtl.core_types import GradientMatrix, GramMatrix
from mgdamtl.minnorm import (MinNormSolution, SolverConfig, StopReason, brute_force_min_norm,
                             frank_wolfe_min_norm, is_pareto_stationary, lattice_prefix_count,
                             simplex_lattice, two_point_gamma, two_task_alpha)
from mgdamtl.oracles import face_enumeration_min_norm

# magnitudes are kept away from the subnormal range: the solver only sees
# Gram entries, which would underflow to zero
elem = st.one_of(st.just(0.0), st.floats(1e-3, 5), st.floats(-5, -1e-3))


def gradients(min_t=2, max_t=5, max_d=20):
    return st.tuples(st.integers(min_t, max_t), st.integers(2, max_d)).flatmap(
        lambda s: arrays(np.float64, s, elements=elem))


def gram_of(g):
    return GradientMatrix(g).gram()


# ------------------------------------------------------------ line search

@pytest.mark.parametrize("theta, theta_bar, gamma", [
    ((1, 0), (3, 0), 1.0),
    ((1, 0), (0, 1), 0.5),
    ((2, 0), (-1, 0), 1 / 3),
])
def test_two_point_gamma_examples(theta, theta_bar, gamma):
    res = two_point_gamma(theta, theta_bar)
    assert res.gamma == pytest.approx(gamma, abs=1e-15) and not res.degenerate


def test_two_point_gamma_reaches_origin():
    g = two_point_gamma((2, 0), (-1, 0)).gamma
    np.testing.assert_allclose(g * np.array([2, 0]) + (1 - g) * np.array([-1, 0]), 0, atol=1e-15)


def test_two_point_gamma_degenerate_and_errors():
    assert two_point_gamma((0, 0), (0, 0)) == (0.5, True)
    with pytest.raises(ValueError, match="dimension"):
        two_point_gamma((1, 0), (1, 0, 0))


@settings(max_examples=300)
@given(arrays(np.float64, 4, elements=elem), arrays(np.float64, 4, elements=elem))
def test_two_point_gamma_minimises_segment_norm(a, b):
    assume(a.any() or b.any())
    g = two_point_gamma(a, b).gamma
    grid = np.linspace(0, 1, 2001)
    pts = grid[:, None] * a + (1 - grid[:, None]) * b
    best = np.min(np.einsum("ij,ij->i", pts, pts))
    p = g * a + (1 - g) * b
    assert 0 <= g <= 1
    assert p @ p <= best + 1e-9 * (1 + a @ a + b @ b)


@pytest.mark.parametrize("g1, g2, alpha", [
    ((0, 1), (1, 0), 0.5),
    ((1, 0), (10, 0), 1.0),
])
def test_two_task_alpha_examples(g1, g2, alpha):
    assert two_task_alpha(g1, g2).gamma == pytest.approx(alpha, abs=1e-15)


def test_two_task_alpha_against_dense_1d_grid():
    g1, g2 = np.array([1.0, 0.2]), np.array([0.2, 1.0])
    grid = np.linspace(0, 1, 100_001)
    pts = grid[:, None] * g1 + (1 - grid[:, None]) * g2
    oracle = grid[np.argmin(np.einsum("ij,ij->i", pts, pts))]
    assert oracle == pytest.approx(0.5, abs=1e-5)
    assert two_task_alpha(g1, g2).gamma == pytest.approx(0.5, abs=1e-15)


def test_two_task_alpha_identical_is_degenerate():
    assert two_task_alpha((1, 2), (1, 2)) == (0.5, True)


@settings(max_examples=300)
@given(arrays(np.float64, 3, elements=elem), arrays(np.float64, 3, elements=elem))
def test_closed_form_equals_line_search(g1, g2):
    assume(not np.array_equal(g1, g2))
    a = two_task_alpha(g1, g2).gamma
    b = two_point_gamma(g1, g2).gamma

    def obj(x):
        p = x * g1 + (1 - x) * g2
        return p @ p

    scale = max(g1 @ g1, g2 @ g2)
    assert obj(a) == pytest.approx(obj(b), abs=1e-12 * scale)
    diff = g1 - g2
    if diff @ diff > 1e-6 * scale:
        assert a == pytest.approx(b, abs=1e-9)


# ----------------------------------------------------------- frank-wolfe

def test_single_task_returns_immediately():
    sol = frank_wolfe_min_norm(GramMatrix([[4.0]]))
    assert list(sol.alpha) == [1.0] and sol.squared_norm == 4.0 and sol.iterations == 0


def test_three_gradient_example_against_grid_oracle():
    G = GradientMatrix(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    M = G.gram()
    np.testing.assert_array_equal(M.m, [[1, 0, 1], [0, 1, 1], [1, 1, 2]])
    oracle = brute_force_min_norm(M, 1e-3)
    np.testing.assert_allclose(oracle.alpha, [0.5, 0.5, 0.0], atol=1e-12)
    assert oracle.squared_norm == pytest.approx(0.5, abs=1e-12)
    # the optimum sits on an edge, where plain Frank-Wolfe zigzags: it only
    # approaches (0.5, 0.5, 0) at rate ~1/k and stops on its iteration limit
    sol = frank_wolfe_min_norm(M)
    assert sol.converged_by is StopReason.ITERATION_LIMIT
    assert abs(sol.squared_norm - 0.5) <= 2e-3 * np.trace(M.m)
    np.testing.assert_allclose(sol.alpha, [0.5, 0.5, 0.0], atol=5e-3)
    tight = frank_wolfe_min_norm(M, SolverConfig.tight())
    assert tight.squared_norm - 0.5 < sol.squared_norm - 0.5
    np.testing.assert_allclose(tight.alpha, [0.5, 0.5, 0.0], atol=2e-4)
    assert not is_pareto_stationary(sol)


def test_identical_rows_stop_on_first_iteration():
    g = np.array([1.0, -2.0, 0.5])
    sol = frank_wolfe_min_norm(GradientMatrix(np.tile(g, (4, 1))).gram())
    assert sol.iterations == 1 and sol.converged_by is StopReason.GAMMA_ZERO
    assert sol.squared_norm == pytest.approx(g @ g, rel=1e-12)


def test_rejects_invalid_gram():
    with pytest.raises(ValueError):
        frank_wolfe_min_norm(np.array([[1.0, 3.0], [3.0, 1.0]]))


@pytest.mark.parametrize("kwargs", [dict(max_iterations=0), dict(gamma_tolerance=0.0),
                                    dict(norm_stall_tolerance=-1.0), dict(stationarity_threshold=np.inf),
                                    dict(max_iterations=2.5)])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


@settings(max_examples=200, deadline=None)
@given(gradients(max_t=6))
def test_solution_invariants_and_monotone_descent(g):
    M = gram_of(g)
    cfg = SolverConfig()
    sol = frank_wolfe_min_norm(M, cfg)
    assert sol.iterations <= cfg.max_iterations
    assert sol.alpha.min() >= 0 and abs(sol.alpha.sum() - 1) <= 1e-9
    q = M.quadratic(sol.alpha)
    assert abs(sol.squared_norm - q) <= 1e-9 * max(q, 1e-300) or sol.squared_norm == max(q, 0.0)
    h = np.array(sol.history)
    assert len(h) == sol.iterations + 1
    assert np.all(np.diff(h) <= 1e-12)


def test_tied_vertices_break_to_lowest_index():
    # a non-unique optimum: equivariance can only hold up to the tie-break
    M = gram_of(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_array_equal(frank_wolfe_min_norm(M).alpha, [0.0, 1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(2, 20), st.data())
def test_permutation_equivariance(seed, t, d, data):
    # generic (continuous) instances have a unique minimiser and no ties
    M = gram_of(np.random.default_rng(seed).normal(size=(t, d)))
    p = np.array(data.draw(st.permutations(range(M.size))))
    a = frank_wolfe_min_norm(M)
    b = frank_wolfe_min_norm(GramMatrix(M.m[np.ix_(p, p)]))
    np.testing.assert_allclose(b.alpha, a.alpha[p], atol=1e-12)
    assert b.squared_norm == pytest.approx(a.squared_norm, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(gradients(), st.integers(-30, 30))
def test_power_of_two_scaling_is_exact(g, k):
    M = gram_of(g)
    c = 2.0 ** k
    a = frank_wolfe_min_norm(M)
    b = frank_wolfe_min_norm(GramMatrix(M.m * c))
    assert np.array_equal(a.alpha, b.alpha) and b.iterations == a.iterations
    assert b.squared_norm == pytest.approx(c * a.squared_norm, rel=1e-9, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(2, 20), st.floats(1e-3, 1e3))
def test_general_scaling(seed, t, d, c):
    M = gram_of(np.random.default_rng(seed).normal(size=(t, d)))
    a = frank_wolfe_min_norm(M)
    b = frank_wolfe_min_norm(GramMatrix(M.m * c))
    # away from power-of-two factors the path can differ only by rounding
    np.testing.assert_allclose(b.alpha, a.alpha, atol=1e-9)
    assert b.squared_norm == pytest.approx(c * a.squared_norm, rel=1e-9, abs=1e-12 * c * np.trace(M.m))


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.tuples(st.just(2), st.integers(2, 20)), elements=elem))
def test_two_tasks_match_closed_form(g):
    closed = two_task_alpha(g[0], g[1])
    assume(not closed.degenerate)
    sol = frank_wolfe_min_norm(gram_of(g))
    p = closed.gamma * g[0] + (1 - closed.gamma) * g[1]
    scale = max(g[0] @ g[0], g[1] @ g[1])
    assert sol.squared_norm == pytest.approx(p @ p, abs=1e-12 * scale)
    # rows that differ only at rounding level make every weight optimal
    diff = g[0] - g[1]
    if diff @ diff > 1e-6 * scale:
        assert sol.alpha[0] == pytest.approx(closed.gamma, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(gradients(max_t=5))
def test_agrees_with_exact_face_enumeration(g):
    M = gram_of(g)
    _, exact = face_enumeration_min_norm(M.m)
    sol = frank_wolfe_min_norm(M)
    assert exact - 1e-9 * np.trace(M.m) <= sol.squared_norm <= exact + 2e-3 * np.trace(M.m)


# ------------------------------------------------------------ brute force

def test_brute_force_examples():
    one = brute_force_min_norm(GramMatrix([[3.0]]))
    assert list(one.alpha) == [1.0] and one.squared_norm == 3.0
    sym = brute_force_min_norm(GramMatrix(np.eye(2)), 1e-3)
    np.testing.assert_allclose(sym.alpha, [0.5, 0.5], atol=1e-15)
    assert sym.squared_norm == pytest.approx(0.5, abs=1e-15)


def test_brute_force_equals_dense_lattice_scan():
    # the segment-wise search must match evaluating every lattice point
    rng = np.random.default_rng(3)
    for t in (2, 3, 4):
        for _ in range(5):
            M = gram_of(rng.normal(size=(t, 6)))
            pts = simplex_lattice(t, 0.02)
            vals = np.einsum("ij,jk,ik->i", pts, M.m, pts)
            bf = brute_force_min_norm(M, 0.02)
            assert bf.squared_norm == pytest.approx(vals.min(), rel=1e-12, abs=1e-15)


def test_brute_force_bound_against_frank_wolfe_t4():
    rng = np.random.default_rng(4)
    for _ in range(10):
        M = gram_of(rng.normal(size=(4, int(rng.integers(2, 21)))))
        bf = brute_force_min_norm(M, 1e-3)
        fw = frank_wolfe_min_norm(M)
        assert bf.squared_norm >= fw.squared_norm - 2e-3 * np.trace(M.m)


def test_brute_force_budget_and_step_validation():
    assert lattice_prefix_count(5, 1e-3) == 167_668_501
    with pytest.raises(ValueError, match="budget"):
        brute_force_min_norm(GramMatrix(np.eye(5)), 1e-3)
    with pytest.raises(ValueError):
        brute_force_min_norm(GramMatrix(np.eye(2)), 0.7)
    with pytest.raises(ValueError, match="integer"):
        brute_force_min_norm(GramMatrix(np.eye(2)), 0.3)


def test_simplex_lattice_size():
    assert simplex_lattice(2, 0.05).shape == (21, 2)
    assert simplex_lattice(3, 0.1).shape == (66, 3)


# ------------------------------------------------------------ stationarity

@pytest.mark.parametrize("value, expected", [(0.0, True), (1e-12, True), (0.5, False)])
def test_is_pareto_stationary(value, expected):
    sol = MinNormSolution(weights=frank_wolfe_min_norm(GramMatrix([[1.0]])).weights, squared_norm=value,
                          iterations=1, converged_by=StopReason.GAMMA_ZERO)
    assert is_pareto_stationary(sol, SolverConfig(stationarity_threshold=1e-8)) is expected


def test_two_task_example_is_not_stationary():
    sol = frank_wolfe_min_norm(gram_of(np.array([[1.0, 0.0], [0.0, 1.0]])))
    assert sol.squared_norm == pytest.approx(0.5, abs=1e-15) and not is_pareto_stationary(sol)
