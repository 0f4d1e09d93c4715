import itertools

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from koopman.exceptions import DimensionError, InfeasibleError, NonFiniteError, NotPositiveDefiniteError, RankWarning
from koopman.services.numerics import (
    AdamMoments,
    QpProblem,
    QpStatus,
    Tape,
    adam_step,
    grad,
    is_feasible,
    kkt_residuals,
    numerical_rank,
    pseudo_inverse,
    riccati_residual,
    solve_dare,
    solve_least_squares,
    solve_qp,
    spectral_radius,
)


def active_set_optimum(H, f, A, b):
    """Brute-force QP optimum: try every active set of at most n independent rows."""
    n = f.size
    best_v, best_value = None, np.inf
    for size in range(n + 1):
        for rows in itertools.combinations(range(A.shape[0]), size):
            A_S = A[list(rows)]
            if size and np.linalg.matrix_rank(A_S) < size:
                continue
            kkt = np.block([[H, A_S.T], [A_S, np.zeros((size, size))]])
            try:
                solution = np.linalg.solve(kkt, np.concatenate([-f, b[list(rows)]]))
            except np.linalg.LinAlgError:
                continue
            v, y = solution[:n], solution[n:]
            if np.any(A @ v > b + 1e-9) or np.any(y < -1e-9):
                continue
            value = 0.5 * v @ H @ v + f @ v
            if value < best_value:
                best_v, best_value = v, value
    return best_v, best_value


def slsqp_optimum(H, f, A, b, start):
    """Reference optimum from scipy's SLSQP, for sizes enumeration cannot reach."""
    result = minimize(
        lambda v: 0.5 * v @ H @ v + f @ v,
        start,
        jac=lambda v: H @ v + f,
        constraints=[{"type": "ineq", "fun": lambda v: b - A @ v, "jac": lambda v: -A}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return result.x, float(result.fun)


class LeastSquaresTest(SimpleTestCase):
    """Test cases for the rank-aware least-squares kernels."""

    def test_full_rank_solution_is_exact(self):
        """Test that a consistent full-rank system is solved to round-off."""
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 20))
        X_true = rng.normal(size=(2, 3))
        X = solve_least_squares(A, X_true @ A)
        np.testing.assert_allclose(X, X_true, atol=1e-10)

    def test_rank_deficient_regressor_warns(self):
        """Test that a duplicated regressor row issues a RankWarning."""
        rng = np.random.default_rng(1)
        row = rng.normal(size=(1, 10))
        A = np.vstack([row, row])
        with self.assertWarns(RankWarning):
            X = solve_least_squares(A, row)
        # Minimum-norm solution splits the weight evenly
        np.testing.assert_allclose(X, [[0.5, 0.5]], atol=1e-10)

    def test_ridge_solution_shrinks(self):
        """Test that a positive ridge pulls the solution towards zero."""
        rng = np.random.default_rng(2)
        A = rng.normal(size=(2, 30))
        B = np.array([[1.0, -2.0]]) @ A
        plain = solve_least_squares(A, B)
        ridged = solve_least_squares(A, B, ridge=10.0)
        self.assertLess(np.linalg.norm(ridged), np.linalg.norm(plain))

    def test_duplicated_columns_leave_the_solution_unchanged(self):
        rng = np.random.default_rng(8)
        A = rng.normal(size=(3, 25))
        B = rng.normal(size=(2, 25))
        once = solve_least_squares(A, B)
        twice = solve_least_squares(np.hstack([A, A]), np.hstack([B, B]))
        np.testing.assert_allclose(twice, once, atol=1e-10)

    def test_mismatched_columns_raise(self):
        with self.assertRaises(DimensionError):
            solve_least_squares(np.ones((2, 5)), np.ones((1, 4)))

    def test_negative_ridge_raises(self):
        with self.assertRaises(ValueError):
            solve_least_squares(np.eye(2), np.eye(2), ridge=-1.0)

    def test_pseudo_inverse_of_zero_matrix(self):
        np.testing.assert_array_equal(pseudo_inverse(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_numerical_rank_drops_tiny_singular_values(self):
        """Test that singular values below the relative cutoff are ignored."""
        A = np.diag([1.0, 1e-14, 0.5])
        report = numerical_rank(A)
        self.assertEqual(report.rank, 2)
        self.assertFalse(report.full_row_rank)
        self.assertEqual(report.sigma_max, 1.0)

    def test_non_finite_input_raises(self):
        with self.assertRaises(NonFiniteError):
            numerical_rank(np.array([[1.0, np.nan]]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=4))
    def test_pseudo_inverse_is_right_inverse_of_wide_matrices(self, seed, rows):
        """Test that A·A^† = I for random full-row-rank wide matrices."""
        A = np.random.default_rng(seed).normal(size=(rows, rows + 6))
        np.testing.assert_allclose(A @ pseudo_inverse(A), np.eye(rows), atol=1e-9)


class RiccatiTest(SimpleTestCase):
    """Test cases for the structured-doubling DARE solver."""

    def test_scalar_solution_is_golden_ratio(self):
        """Test A=B=Q=R=1, whose Riccati equation reduces to P² − P − 1 = 0."""
        P, K = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        self.assertAlmostEqual(P[0, 0], golden, places=12)
        self.assertAlmostEqual(K[0, 0], -golden / (1.0 + golden), places=12)

    def test_uncontrolled_stable_scalar_sums_the_geometric_series(self):
        """Test A=0.5, B=0: P = 1/(1 − 0.25) = 4/3 and K = 0."""
        P, K = solve_dare([[0.5]], [[0.0]], [[1.0]], [[1.0]])
        self.assertAlmostEqual(P[0, 0], 4.0 / 3.0, places=12)
        self.assertEqual(K[0, 0], 0.0)

    def test_random_stabilizable_pair_has_small_residual(self):
        """Test that the residual vanishes and the closed loop is stable."""
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        Q = np.eye(3)
        R = np.diag([1.0, 2.0])
        P, K = solve_dare(A, B, Q, R)
        residual = riccati_residual(A, B, Q, R, P, K)
        self.assertLess(np.linalg.norm(residual), 1e-8 * max(1.0, np.linalg.norm(P)))
        self.assertLess(spectral_radius(A + B @ K), 1.0)
        np.testing.assert_allclose(P, P.T, atol=1e-12)

    def test_unstable_uncontrollable_pair_is_infeasible(self):
        with self.assertRaises(InfeasibleError):
            solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]])

    def test_indefinite_input_weight_raises(self):
        with self.assertRaises(NotPositiveDefiniteError):
            solve_dare([[0.5]], [[1.0]], [[1.0]], [[-1.0]])

    def test_inconsistent_shapes_raise(self):
        with self.assertRaises(DimensionError):
            solve_dare(np.eye(2), np.ones((3, 1)), np.eye(2), [[1.0]])


class QpSolverTest(SimpleTestCase):
    """Test cases for the ADMM QP solver."""

    def test_unconstrained_problem_is_solved_directly(self):
        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        f = np.array([1.0, -1.0])
        solution = solve_qp(QpProblem(H, f, np.zeros((0, 2)), np.zeros(0)))
        self.assertEqual(solution.status, QpStatus.OPTIMAL)
        np.testing.assert_allclose(solution.v_star, -np.linalg.solve(H, f), atol=1e-12)

    def test_box_constrained_problem(self):
        """Test that the minimizer of ‖v − 2‖² under v ≤ 1 lands on the bound."""
        problem = QpProblem(np.eye(2), [-2.0, -2.0], np.eye(2), [1.0, 1.0])
        solution = solve_qp(problem)
        self.assertTrue(solution.optimal)
        np.testing.assert_allclose(solution.v_star, [1.0, 1.0], atol=1e-8)
        np.testing.assert_allclose(solution.multipliers, [1.0, 1.0], atol=1e-6)
        self.assertTrue(kkt_residuals(problem, solution.v_star, solution.multipliers).within(1e-6))

    def test_infeasible_problem_is_certified(self):
        """Test that v ≤ −1 together with v ≥ 1 is reported infeasible."""
        problem = QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0])
        solution = solve_qp(problem)
        self.assertEqual(solution.status, QpStatus.INFEASIBLE)
        self.assertFalse(solution.optimal)

    def test_random_problems_match_active_set_enumeration(self):
        """Test 100 random strictly convex QPs against a brute-force optimum."""
        rng = np.random.default_rng(4)
        for trial in range(100):
            n = int(rng.integers(2, 4))
            M = rng.normal(size=(n, n))
            H = M @ M.T + 0.1 * np.eye(n)
            f = rng.normal(size=n) * 3.0
            general = rng.normal(size=(6, n))
            interior = rng.uniform(-0.5, 0.5, size=n)
            A = np.vstack([np.eye(n), -np.eye(n), general])
            b = np.concatenate([np.ones(n), np.ones(n), general @ interior + rng.uniform(0.05, 1.0, size=6)])
            problem = QpProblem(H, f, A, b)

            solution = solve_qp(problem)
            v_oracle, value_oracle = active_set_optimum(H, f, A, b)
            with self.subTest(trial=trial):
                self.assertTrue(solution.optimal)
                self.assertTrue(is_feasible(problem, solution.v_star, tol=1e-6))
                self.assertAlmostEqual(solution.objective, value_oracle, delta=1e-6 * max(1.0, abs(value_oracle)))
                np.testing.assert_allclose(solution.v_star, v_oracle, atol=1e-5)

    def test_random_controller_sized_problems_match_slsqp(self):
        """Test 100 random QPs with up to 16 variables, box bounds and 10 general rows."""
        rng = np.random.default_rng(5)
        for trial in range(100):
            n = int(rng.integers(2, 17))
            M = rng.normal(size=(n, n))
            H = M @ M.T + 0.1 * np.eye(n)
            f = rng.normal(size=n) * 3.0
            general = rng.normal(size=(10, n))
            interior = rng.uniform(-0.5, 0.5, size=n)
            A = np.vstack([np.eye(n), -np.eye(n), general])
            b = np.concatenate([np.ones(n), np.ones(n), general @ interior + rng.uniform(0.05, 1.0, size=10)])
            problem = QpProblem(H, f, A, b)

            solution = solve_qp(problem)
            _, value_oracle = slsqp_optimum(H, f, A, b, start=interior)
            with self.subTest(trial=trial, n=n):
                self.assertTrue(solution.optimal)
                self.assertTrue(is_feasible(problem, solution.v_star, tol=1e-6))
                self.assertAlmostEqual(solution.objective, value_oracle, delta=1e-6 * max(1.0, abs(value_oracle)))
                self.assertTrue(kkt_residuals(problem, solution.v_star, solution.multipliers).within(1e-6))

    def test_no_feasible_direction_improves_the_optimum(self):
        """Test local optimality against 100 random feasible directions of length 1e-3."""
        rng = np.random.default_rng(6)
        for trial in range(5):
            M = rng.normal(size=(4, 4))
            H = M @ M.T + 0.1 * np.eye(4)
            problem = QpProblem(H, rng.normal(size=4) * 4.0, np.vstack([np.eye(4), -np.eye(4)]), np.ones(8))
            solution = solve_qp(problem)
            self.assertTrue(solution.optimal)
            accepted = 0
            for _ in range(20000):
                direction = rng.normal(size=4)
                trial_point = solution.v_star + 1e-3 * direction / np.linalg.norm(direction)
                if not is_feasible(problem, trial_point, tol=1e-12):
                    continue
                accepted += 1
                with self.subTest(trial=trial, direction=accepted):
                    self.assertGreaterEqual(problem.objective(trial_point), solution.objective - 1e-9)
                if accepted == 100:
                    break
            self.assertEqual(accepted, 100)

    def test_stalled_admm_is_finished_by_active_set(self):
        """Test that a two-iteration cap still ends at the brute-force optimum."""
        rng = np.random.default_rng(7)
        M = rng.normal(size=(3, 3))
        H = M @ M.T + 0.1 * np.eye(3)
        f = np.array([4.0, -3.0, 2.0])
        general = rng.normal(size=(4, 3))
        A = np.vstack([np.eye(3), -np.eye(3), general])
        b = np.concatenate([np.ones(3), np.ones(3), np.abs(general).sum(axis=1) * 0.5])
        problem = QpProblem(H, f, A, b)
        solution = solve_qp(problem, max_iter=2)
        v_oracle, value_oracle = active_set_optimum(H, f, A, b)
        self.assertEqual(solution.status, QpStatus.OPTIMAL)
        np.testing.assert_allclose(solution.v_star, v_oracle, atol=1e-7)
        self.assertAlmostEqual(solution.objective, value_oracle, delta=1e-9 * max(1.0, abs(value_oracle)))

    def test_is_feasible_respects_tolerance(self):
        problem = QpProblem(np.eye(1), [0.0], [[1.0]], [1.0])
        self.assertTrue(is_feasible(problem, [1.0 + 1e-10]))
        self.assertFalse(is_feasible(problem, [1.1]))
        with self.assertRaises(DimensionError):
            is_feasible(problem, [0.0, 0.0])

    def test_asymmetric_hessian_raises(self):
        with self.assertRaises(DimensionError):
            QpProblem([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), np.zeros(0))

    def test_non_positive_tolerance_raises(self):
        with self.assertRaises(ValueError):
            solve_qp(QpProblem(np.eye(1), [0.0], [[1.0]], [1.0]), tol=0.0)


class AdamTest(SimpleTestCase):
    """Test cases for the Adam step."""

    def test_first_step_moves_by_learning_rate(self):
        """Test that the bias-corrected first step is lr·sign(g)."""
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        new_params, moments = adam_step(params, grads, AdamMoments.zeros_like(params), lr=0.01, step=1)
        np.testing.assert_allclose(new_params["w"], params["w"] - 0.01 * np.sign(grads["w"]), atol=1e-6)
        np.testing.assert_allclose(moments.first["w"], 0.1 * grads["w"])
        # Inputs are left untouched
        np.testing.assert_array_equal(params["w"], [1.0, -2.0, 0.5])

    def test_minimizes_a_quadratic(self):
        params = {"w": np.array([3.0, -1.0])}
        moments = AdamMoments.zeros_like(params)
        for step in range(1, 2001):
            params, moments = adam_step(params, {"w": 2.0 * params["w"]}, moments, lr=0.05, step=step)
        self.assertLess(np.linalg.norm(params["w"]), 1e-2)

    def test_non_finite_gradient_raises(self):
        params = {"w": np.zeros(2)}
        with self.assertRaises(NonFiniteError):
            adam_step(params, {"w": np.array([np.inf, 0.0])}, AdamMoments.zeros_like(params), lr=0.1, step=1)

    def test_invalid_step_and_rate_raise(self):
        params = {"w": np.zeros(1)}
        moments = AdamMoments.zeros_like(params)
        with self.assertRaises(ValueError):
            adam_step(params, {"w": np.ones(1)}, moments, lr=0.1, step=0)
        with self.assertRaises(ValueError):
            adam_step(params, {"w": np.ones(1)}, moments, lr=0.0, step=1)


class TapeTest(SimpleTestCase):
    """Test cases for the reverse-mode autodiff tape."""

    @staticmethod
    def loss_and_grad(W, b, X, Y):
        tape = Tape()
        w_node = tape.parameter("W", W)
        b_node = tape.parameter("b", b)
        hidden = tape.tanh(tape.add(tape.matvec(w_node, tape.constant(X)), b_node))
        residual = tape.sub(tape.constant(Y), tape.mul(hidden, tape.constant(2.0)))
        loss = tape.mul(tape.sum(tape.square(residual)), tape.constant(0.5))
        return float(tape.value(loss)), grad(tape, loss)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        W = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 1))
        X = rng.normal(size=(3, 4))
        Y = rng.normal(size=(2, 4))
        _, grads = self.loss_and_grad(W, b, X, Y)

        eps = 1e-6
        for name, value in (("W", W), ("b", b)):
            numeric = np.zeros_like(value)
            for index in np.ndindex(value.shape):
                plus, minus = value.copy(), value.copy()
                plus[index] += eps
                minus[index] -= eps
                args_plus = (plus, b) if name == "W" else (W, plus)
                args_minus = (minus, b) if name == "W" else (W, minus)
                numeric[index] = (
                    self.loss_and_grad(*args_plus, X, Y)[0] - self.loss_and_grad(*args_minus, X, Y)[0]
                ) / (2 * eps)
            with self.subTest(parameter=name):
                self.assertEqual(grads[name].shape, value.shape)
                np.testing.assert_allclose(grads[name], numeric, rtol=1e-6, atol=1e-8)

    def test_unused_parameter_gets_zero_gradient(self):
        tape = Tape()
        used = tape.parameter("used", np.array([2.0]))
        tape.parameter("unused", np.array([1.0, 1.0]))
        out = tape.sum(tape.square(used))
        grads = grad(tape, out)
        np.testing.assert_allclose(grads["used"], [4.0])
        np.testing.assert_array_equal(grads["unused"], [0.0, 0.0])

    def test_non_scalar_output_raises(self):
        tape = Tape()
        node = tape.parameter("w", np.ones(3))
        with self.assertRaises(DimensionError):
            grad(tape, node)

    def test_duplicate_parameter_name_raises(self):
        tape = Tape()
        tape.parameter("w", 1.0)
        with self.assertRaises(KeyError):
            tape.parameter("w", 2.0)
