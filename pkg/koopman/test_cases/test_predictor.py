import numpy as np
from django.test import SimpleTestCase

from koopman.exceptions import DimensionError, RankDeficientError
from koopman.services.datapipe import build_hankels, lifted_sequence
from koopman.services.observables import init_map, lift
from koopman.services.plants import make_plant, simulate
from koopman.services.predictor import (
    MultiStepPredictor,
    consistency_report,
    fit_output_selector,
    fit_predictor,
    predict,
    predict_outputs,
    structured_matrices,
    with_structured_matrices,
)


def lti_hankels(u, N: int = 3):
    traj = simulate(make_plant("lti"), [1.0], u)
    obs_map = init_map(T_ini=1, m=1, p=1, hidden=(), seed=0)
    lifted = lifted_sequence(lambda X: lift(obs_map, X), traj, 1)
    return build_hankels(traj, 1, N, lifted)


class StructuredMatricesTest(SimpleTestCase):
    """Test cases for Ψ(A) and Γ(A, B)."""

    def test_scalar_example(self):
        Psi, Gamma = structured_matrices([[0.5]], [[1.0]], 3)
        np.testing.assert_allclose(Psi[:, 0], [0.5, 0.25, 0.125])
        np.testing.assert_allclose(Gamma, [[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.25, 0.5, 1.0]])

    def test_block_shapes(self):
        A = np.array([[0.9, 0.1], [0.0, 0.8]])
        B = np.array([[0.0, 1.0], [1.0, 0.0]])
        Psi, Gamma = structured_matrices(A, B, 4)
        self.assertEqual(Psi.shape, (8, 2))
        self.assertEqual(Gamma.shape, (8, 8))
        np.testing.assert_allclose(Psi[6:], np.linalg.matrix_power(A, 4))
        np.testing.assert_allclose(Gamma[6:, :2], np.linalg.matrix_power(A, 3) @ B)
        np.testing.assert_array_equal(Gamma[:2, 2:], np.zeros((2, 6)))

    def test_invalid_horizon_raises(self):
        with self.assertRaises(ValueError):
            structured_matrices([[0.5]], [[1.0]], 0)


class FitPredictorTest(SimpleTestCase):
    """Test cases for the least-squares multi-step predictor."""

    def test_linear_oracle_recovers_matrix_powers(self):
        hankels = lti_hankels(np.random.default_rng(0).uniform(-1.0, 1.0, 150))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f, C=[[1.0]])
        Psi, Gamma = structured_matrices([[0.5]], [[1.0]], 3)
        np.testing.assert_allclose(pred.Psi_LS, Psi, atol=1e-9)
        np.testing.assert_allclose(pred.Gamma_LS, Gamma, atol=1e-9)
        np.testing.assert_allclose(pred.A_tilde, [[0.5]], atol=1e-9)
        np.testing.assert_allclose(pred.B_tilde, [[1.0]], atol=1e-9)
        self.assertEqual(pred.ridge, 0.0)
        self.assertTrue(pred.rank.full_row_rank)
        self.assertLess(pred.residual, 1e-9)

        report = consistency_report(pred)
        self.assertLess(report["psi_mismatch"], 1e-9)
        self.assertLess(report["gamma_mismatch"], 1e-9)
        self.assertAlmostEqual(report["spectral_radius_A"], 0.5, places=9)

    def test_predict_matches_simulation(self):
        hankels = lti_hankels(np.random.default_rng(1).uniform(-1.0, 1.0, 150))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f)
        u_seq = np.array([0.2, -0.4, 0.1])
        expected = simulate(make_plant("lti"), [0.8], u_seq).y[1:, 0]
        np.testing.assert_allclose(predict(pred, [0.8], u_seq), expected, atol=1e-9)
        np.testing.assert_allclose(predict_outputs(pred, [[0.8]], u_seq[:, None])[:, 0], expected, atol=1e-9)

    def test_predict_is_linear_in_state_and_inputs(self):
        hankels = lti_hankels(np.random.default_rng(6).uniform(-1.0, 1.0, 150))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f)
        rng = np.random.default_rng(7)
        for _ in range(10):
            z1, z2 = rng.normal(size=1), rng.normal(size=1)
            u1, u2 = rng.normal(size=3), rng.normal(size=3)
            a, b = rng.normal(size=2)
            combined = predict(pred, a * z1 + b * z2, a * u1 + b * u2)
            separate = a * predict(pred, z1, u1) + b * predict(pred, z2, u2)
            np.testing.assert_allclose(combined, separate, atol=1e-10)

    def test_rank_deficient_data_raise(self):
        """Test that a zero input signal cannot excite the U_f rows."""
        hankels = lti_hankels(np.zeros(60))
        with self.assertRaises(RankDeficientError):
            fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f)

    def test_ridge_fallback(self):
        hankels = lti_hankels(np.zeros(60))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f, allow_ridge=True)
        self.assertGreater(pred.ridge, 0.0)
        self.assertFalse(pred.rank.full_row_rank)
        self.assertTrue(np.all(np.isfinite(pred.Psi_LS)))

    def test_structured_variant(self):
        hankels = lti_hankels(np.random.default_rng(2).uniform(-1.0, 1.0, 150))
        pred = with_structured_matrices(fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f))
        self.assertTrue(pred.structured)
        Psi, Gamma = structured_matrices(pred.A_tilde, pred.B_tilde, 3)
        np.testing.assert_array_equal(pred.Psi_LS, Psi)
        np.testing.assert_array_equal(pred.Gamma_LS, Gamma)

    def test_serialized_predictor_is_identical(self):
        hankels = lti_hankels(np.random.default_rng(3).uniform(-1.0, 1.0, 150))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f)
        restored = MultiStepPredictor.from_dict(pred.to_dict())
        np.testing.assert_array_equal(restored.Gamma_LS, pred.Gamma_LS)
        self.assertEqual(restored.rank, pred.rank)
        self.assertEqual(restored.N, 3)

    def test_mismatched_dimensions_raise(self):
        with self.assertRaises(DimensionError):
            fit_predictor(np.ones((2, 10)), np.ones((3, 10)), np.ones((1, 10)))
        hankels = lti_hankels(np.random.default_rng(4).uniform(-1.0, 1.0, 150))
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f)
        with self.assertRaises(DimensionError):
            predict(pred, [0.0], [0.0, 0.0])

    def test_output_selector_fit(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(3, 40))
        C_true = np.array([[1.0, -0.5, 2.0]])
        np.testing.assert_allclose(fit_output_selector(Z, C_true @ Z), C_true, atol=1e-10)
