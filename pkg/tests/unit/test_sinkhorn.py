"""
Unit tests for services/sinkhorn.py
"""

import numpy as np
import pytest
from scipy.special import logsumexp

from models.measure import DiscreteMeasure
from models.transport import DualPotentials, SinkhornConfig
from services.sinkhorn import (
    cost_matrix,
    divergence_value,
    extend_potential,
    marginal_residual,
    plan,
    solve,
    solve_shared_support,
)
from utils.errors import ValidationError


def line_measure(points, weights=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 1)
    if weights is None:
        return DiscreteMeasure.uniform(points)
    return DiscreteMeasure(points, weights)


def scaling_oracle(P, U, epsilon, iterations=20000):
    """Plain scaling-form Sinkhorn in float64, returned as centered potentials and plan."""
    C = cost_matrix(P.points, U.points)
    K = np.exp(-C / epsilon)
    b = np.ones(U.size)
    for _ in range(iterations):
        a = P.weights / (K @ b)
        b = U.weights / (K.T @ a)
    f = epsilon * np.log(a / P.weights)
    g = epsilon * np.log(b / U.weights)
    shift = U.weights @ g
    return f + shift, g - shift, a[:, None] * K * b[None, :]


class TestCostMatrix:
    """Test the half squared Euclidean cost."""

    def test_one_dimensional(self):
        """Test 1/2 * 2^2."""
        np.testing.assert_array_equal(cost_matrix([[0.0]], [[2.0]]), [[2.0]])

    def test_identical_points(self):
        """Test that equal points cost zero."""
        np.testing.assert_array_equal(cost_matrix([[3.0, 4.0]], [[3.0, 4.0]]), [[0.0]])

    def test_diagonal(self):
        """Test 1/2 * |(1, 1)|^2."""
        np.testing.assert_allclose(cost_matrix([[0.0, 0.0]], [[1.0, 1.0]]), [[1.0]])

    def test_dimension_mismatch(self):
        """Test that mismatched dimensions are rejected."""
        with pytest.raises(ValidationError):
            cost_matrix([[0.0, 0.0]], [[1.0]])


class TestSolve:
    """Test the log-domain solver."""

    def test_single_atoms(self):
        """Test that two Diracs give f = cost and g = 0."""
        pot = solve(line_measure([0.0]), line_measure([1.0]), SinkhornConfig(epsilon=0.3))
        assert pot.converged
        np.testing.assert_allclose(pot.f, [0.5])
        np.testing.assert_allclose(pot.g, [0.0], atol=1e-15)

    def test_single_atom_reference(self):
        """Test that a Dirac reference gives f equal to the cost column."""
        pot = solve(line_measure([0.0, 1.0]), line_measure([0.0]), SinkhornConfig(epsilon=1.0))
        np.testing.assert_allclose(pot.f, [0.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(pot.g, [0.0], atol=1e-15)

    def test_matches_scaling_oracle(self):
        """Test two atoms against two atoms at eps = 0.5."""
        P, U = line_measure([0.0, 1.0]), line_measure([0.0, 1.0])
        pot = solve(P, U, SinkhornConfig(epsilon=0.5, tol=1e-13, max_iter=10000))
        f, g, _ = scaling_oracle(P, U, 0.5)
        np.testing.assert_allclose(pot.f, f, atol=1e-10)
        np.testing.assert_allclose(pot.g, g, atol=1e-10)

    def test_centered(self, two_measures, sink_cfg):
        """Test that g has zero reference-weighted mean."""
        P, U = two_measures
        pot = solve(P, U, sink_cfg)
        assert abs(U.weights @ pot.g) <= 1e-10

    def test_converges_on_random_instances(self, rng):
        """Test convergence for random clouds at small regularization."""
        for epsilon in (0.05, 0.01):
            for _ in range(3):
                n, q = rng.integers(2, 33, size=2)
                P = DiscreteMeasure(rng.random((n, 2)), rng.random(n) + 0.1)
                U = DiscreteMeasure(rng.random((q, 2)), rng.random(q) + 0.1)
                cfg = SinkhornConfig(epsilon=epsilon, tol=1e-6, max_iter=10000)
                pot = solve(P, U, cfg)
                assert pot.converged and pot.residual <= 1e-6
                assert max(marginal_residual(P, U, pot)) <= 1e-5

    def test_optimality_residuals(self, two_measures, sink_cfg):
        """Test that both optimality conditions hold at convergence."""
        P, U = two_measures
        pot = solve(P, U, sink_cfg)
        assert pot.converged
        assert max(marginal_residual(P, U, pot)) <= 1e-6

    def test_non_convergence_is_flagged(self, two_measures):
        """Test that running out of updates returns a flagged result."""
        P, U = two_measures
        pot = solve(P, U, SinkhornConfig(epsilon=0.01, max_iter=1, tol=1e-12))
        assert not pot.converged
        assert pot.iterations == 1
        assert pot.residual > 1e-12

    def test_warm_start_same_fixed_point(self, two_measures, sink_cfg):
        """Test that warm starts change iteration counts only."""
        P, U = two_measures
        cold = solve(P, U, sink_cfg)
        warm = solve(P, U, sink_cfg, warm=cold)
        np.testing.assert_allclose(warm.g, cold.g, atol=1e-8)
        np.testing.assert_allclose(warm.f, cold.f, atol=1e-8)
        assert warm.iterations <= cold.iterations

    def test_warm_start_shape_mismatch(self, two_measures, sink_cfg):
        """Test that a warm start for another problem is rejected."""
        P, U = two_measures
        with pytest.raises(ValidationError):
            solve(U, P, sink_cfg, warm=solve(P, U, sink_cfg))

    def test_isometry_equivariance(self, two_measures, sink_cfg):
        """Test that moving both supports rigidly leaves the potentials alone."""
        P, U = two_measures
        angle = 0.7
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        t = np.array([2.0, -1.0])
        moved = solve(P.transformed(R, t), U.transformed(R, t), sink_cfg)
        base = solve(P, U, sink_cfg)
        np.testing.assert_allclose(moved.f, base.f, atol=1e-8)
        np.testing.assert_allclose(moved.g, base.g, atol=1e-8)

    def test_symmetric_objective(self, two_measures, sink_cfg):
        """Test that swapping the measures keeps the dual value."""
        P, U = two_measures
        forward = divergence_value(P, U, solve(P, U, sink_cfg))
        backward = divergence_value(U, P, solve(U, P, sink_cfg))
        assert forward == pytest.approx(backward, abs=1e-8)

    def test_dimension_mismatch(self, sink_cfg):
        """Test that measures of different dimension are rejected."""
        with pytest.raises(ValidationError):
            solve(line_measure([0.0]), DiscreteMeasure.dirac([0.0, 0.0]), sink_cfg)


class TestSharedSupport:
    """Test the batched solver for measures on one support."""

    def test_matches_individual_solves(self, rng, sink_cfg):
        """Test that each row reproduces its own solve, zero weights included."""
        points = rng.random((6, 2))
        weights = rng.random((3, 6)) + 0.05
        weights[1, 2] = 0.0
        U = DiscreteMeasure(rng.random((4, 2)), np.full(4, 0.25))
        batched = solve_shared_support(points, weights, U, sink_cfg)
        for row, pot in zip(weights, batched):
            single = solve(DiscreteMeasure(points, row), U, sink_cfg)
            np.testing.assert_allclose(pot.g, single.g, atol=1e-8)
            assert pot.converged
            assert pot.residual <= sink_cfg.tol
        assert batched[1].f.shape == (6,)

    def test_log_domain_fallback(self, rng, sink_cfg, mocker):
        """Test that the log-domain batch gives the same potentials."""
        points = rng.random((8, 2))
        weights = rng.random((4, 8)) + 0.05
        U = DiscreteMeasure(rng.random((3, 2)), np.array([0.2, 0.3, 0.5]))
        fast = solve_shared_support(points, weights, U, sink_cfg)
        mocker.patch('services.sinkhorn.SCALING_EXPONENT_LIMIT', -np.inf)
        slow = solve_shared_support(points, weights, U, sink_cfg)
        for a, b in zip(fast, slow):
            np.testing.assert_allclose(a.g, b.g, atol=1e-8)
            np.testing.assert_allclose(a.f, b.f, atol=1e-8)
            assert b.converged

    def test_lost_finiteness_reruns_in_log_domain(self, rng, sink_cfg, mocker):
        """Test that a scaling-form failure falls back instead of raising."""
        points = rng.random((5, 2))
        weights = rng.random((2, 5)) + 0.05
        U = DiscreteMeasure(rng.random((3, 2)), np.full(3, 1 / 3))
        mocker.patch('services.sinkhorn._shared_scaling_loop', return_value=None)
        batched = solve_shared_support(points, weights, U, sink_cfg)
        single = solve(DiscreteMeasure(points, weights[0]), U, sink_cfg)
        np.testing.assert_allclose(batched[0].g, single.g, atol=1e-8)

    def test_small_epsilon_uses_log_domain(self, rng):
        """Test a regularization too small for the Gibbs kernel."""
        points = rng.random((6, 2)) * 4.0
        weights = rng.random((2, 6)) + 0.05
        U = DiscreteMeasure(rng.random((3, 2)), np.full(3, 1 / 3))
        cfg = SinkhornConfig(epsilon=1e-3, max_iter=20000, tol=1e-8)
        batched = solve_shared_support(points, weights, U, cfg)
        single = solve(DiscreteMeasure(points, weights[1]), U, cfg)
        assert all(np.all(np.isfinite(p.g)) for p in batched)
        np.testing.assert_allclose(batched[1].g, single.g, atol=1e-6)

    def test_grid_batch_converges(self):
        """Test a benchmark-sized grid at eps = 0.01 within the default budget."""
        axis = (np.arange(20) + 0.5) / 20
        points = np.array([[a, b] for b in axis for a in axis])
        rng = np.random.default_rng(0)
        centres = rng.uniform(0.2, 0.8, size=(50, 2))
        sq = ((points[None] - centres[:, None]) ** 2).sum(axis=2)
        weights = np.exp(-sq / (2 * 0.15 ** 2)) + 1e-12
        U = DiscreteMeasure.uniform(rng.uniform(0.0, 1.0, size=(6, 2)))
        cfg = SinkhornConfig(epsilon=1e-2)
        batched = solve_shared_support(points, weights, U, cfg)
        assert all(p.converged for p in batched)
        for p in batched:
            assert U.weights @ p.g == pytest.approx(0.0, abs=1e-12)

    def test_rejects_empty_rows(self, sink_cfg):
        """Test that every row needs positive mass."""
        U = DiscreteMeasure.dirac([0.0, 0.0])
        with pytest.raises(ValidationError):
            solve_shared_support(np.zeros((2, 2)), np.zeros((1, 2)), U, sink_cfg)


class TestResiduals:
    """Test the optimality-condition residuals."""

    def test_zero_cost(self):
        """Test that zero potentials on a zero cost give zero residuals."""
        P = DiscreteMeasure.uniform(np.zeros((2, 2)))
        pot = DualPotentials(np.zeros(2), np.zeros(2), 0.5, 0, 0.0, True)
        assert marginal_residual(P, P, pot) == pytest.approx((0.0, 0.0), abs=1e-15)

    def test_perturbed_potential(self):
        """Test that adding eps*log(2) to f doubles the row mass."""
        P = DiscreteMeasure.dirac([0.0])
        eps = 0.2
        pot = DualPotentials(np.array([eps * np.log(2.0)]), np.zeros(1), eps, 0, 0.0, True)
        r_p, _ = marginal_residual(P, P, pot)
        assert r_p == pytest.approx(1.0)


class TestPlan:
    """Test transport plans."""

    def test_single_atoms(self):
        """Test that the only coupling is the product."""
        P, U = line_measure([0.0]), line_measure([2.0])
        np.testing.assert_allclose(plan(P, U, solve(P, U, SinkhornConfig())).values, [[1.0]])

    def test_large_regularization(self):
        """Test that a huge epsilon approaches the independent coupling."""
        P = line_measure([0.0, 1.0], [0.3, 0.7])
        pot = solve(P, P, SinkhornConfig(epsilon=1e3))
        np.testing.assert_allclose(plan(P, P, pot).values, np.outer(P.weights, P.weights), atol=1e-3)

    def test_marginals(self, two_measures, sink_cfg):
        """Test that plan rows sum to P's weights."""
        P, U = two_measures
        pot = solve(P, U, sink_cfg)
        pi = plan(P, U, pot)
        np.testing.assert_allclose(pi.row_sums(), P.weights, atol=10 * sink_cfg.tol)
        assert np.all(pi.values >= 0)

    def test_requires_convergence(self, two_measures):
        """Test that a stalled solve cannot produce a plan."""
        P, U = two_measures
        pot = solve(P, U, SinkhornConfig(epsilon=0.01, max_iter=1, tol=1e-12))
        with pytest.raises(ValidationError):
            plan(P, U, pot)


class TestDivergence:
    """Test the dual objective."""

    def test_same_dirac(self):
        """Test that a Dirac against itself costs nothing."""
        P = DiscreteMeasure.dirac([0.3, -0.2])
        assert divergence_value(P, P, solve(P, P, SinkhornConfig())) == pytest.approx(0.0, abs=1e-12)

    def test_two_diracs(self):
        """Test that two Diracs cost half their squared distance."""
        P, U = DiscreteMeasure.dirac([0.0, 0.0]), DiscreteMeasure.dirac([1.0, 2.0])
        assert divergence_value(P, U, solve(P, U, SinkhornConfig())) == pytest.approx(2.5)

    def test_matches_primal(self):
        """Test the dual value against the primal objective of the oracle plan."""
        P, U = line_measure([0.0, 1.0]), line_measure([0.0, 1.0])
        eps = 0.5
        pot = solve(P, U, SinkhornConfig(epsilon=eps, tol=1e-13, max_iter=10000))
        _, _, pi = scaling_oracle(P, U, eps)
        C = cost_matrix(P.points, U.points)
        product = np.outer(P.weights, U.weights)
        primal = np.sum(pi * C) + eps * np.sum(pi * np.log(pi / product))
        assert divergence_value(P, U, pot) == pytest.approx(primal, abs=1e-8)

    def test_epsilon_mismatch(self, two_measures, sink_cfg):
        """Test that potentials are tied to their regularization."""
        P, U = two_measures
        pot = solve(P, U, sink_cfg)
        with pytest.raises(ValidationError):
            divergence_value(P, U, pot, SinkhornConfig(epsilon=0.2))


class TestExtendPotential:
    """Test the out-of-support extension of g."""

    def test_symmetric_pair(self):
        """Test g(y) - g(0) = y^2/2 - log cosh(y) for P uniform on {-1, 1}."""
        P, U = line_measure([-1.0, 1.0]), line_measure([0.0])
        pot = solve(P, U, SinkhornConfig(epsilon=1.0))
        values = extend_potential(P, pot.f, np.array([[0.0], [1.0]]), 1.0)
        assert values[1] - values[0] == pytest.approx(0.5 - np.log(np.cosh(1.0)), abs=1e-12)

    def test_moment_generating_function(self, rng):
        """Test the closed form y^2/2 - log M_P(y) for a Dirac reference at eps = 1."""
        U = DiscreteMeasure.dirac([0.0, 0.0])
        cfg = SinkhornConfig(epsilon=1.0)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(1, 21))
            directions = rng.standard_normal((n, 2))
            radii = rng.random(n) ** 0.5
            points = directions / np.linalg.norm(directions, axis=1, keepdims=True) * radii[:, None]
            P = DiscreteMeasure(points, rng.random(n) + 0.05)
            pot = solve(P, U, cfg)
            queries = rng.uniform(-2.0, 2.0, size=(100, 2))
            mgf_log = logsumexp(np.log(P.weights)[:, None] + P.points @ queries.T, axis=0)
            expected = 0.5 * np.sum(queries ** 2, axis=1) - mgf_log
            got = extend_potential(P, pot.f, queries, 1.0)
            worst = max(worst, float(np.max(np.abs(got - expected))))
        assert worst <= 1e-6

    def test_reproduces_solver_g(self, two_measures, sink_cfg):
        """Test that the extension on the reference atoms is the solver's g."""
        P, U = two_measures
        pot = solve(P, U, sink_cfg)
        np.testing.assert_allclose(extend_potential(P, pot.f, U.points, sink_cfg.epsilon), pot.g, atol=1e-9)

    def test_single_atom(self):
        """Test the one-term formula for a Dirac."""
        P, U = DiscreteMeasure.dirac([0.2, 0.1]), DiscreteMeasure.dirac([0.0, 0.0])
        pot = solve(P, U, SinkhornConfig(epsilon=0.5))
        y = np.array([[1.0, -1.0]])
        expected = 0.5 * np.sum((P.points[0] - y[0]) ** 2) - pot.f[0]
        assert extend_potential(P, pot.f, y, 0.5)[0] == pytest.approx(expected)

    def test_size_mismatch(self, two_measures):
        """Test that f must match P."""
        P, _ = two_measures
        with pytest.raises(ValidationError):
            extend_potential(P, np.zeros(2), [[0.0, 0.0]], 0.1)
