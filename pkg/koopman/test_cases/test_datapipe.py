import numpy as np
from django.test import SimpleTestCase

from koopman.exceptions import DimensionError, InsufficientDataError
from koopman.services.datapipe import (
    IniWindow,
    build_hankels,
    check_excitation,
    dataset_manifest,
    ini_window,
    ini_windows,
    required_columns,
    split_trajectory,
    window,
)
from koopman.services.plants import Trajectory, make_plant, simulate


def ramp(steps: int) -> Trajectory:
    """u(k) = k and y(k) = 100 + k, so every entry names its own time index."""
    return Trajectory(np.arange(steps, dtype=float), 100.0 + np.arange(steps + 1, dtype=float))


class WindowTest(SimpleTestCase):
    """Test cases for sample windows and past windows."""

    def test_window_stacks_consecutive_samples(self):
        np.testing.assert_array_equal(window(np.arange(6.0), 2, 3), [2.0, 3.0, 4.0])

    def test_window_outside_signal_raises(self):
        with self.assertRaises(InsufficientDataError):
            window(np.arange(4.0), 2, 3)

    def test_ini_window_indices(self):
        x_ini = ini_window(ramp(9), 3, 2)
        np.testing.assert_array_equal(x_ini.u_ini, [2.0])
        np.testing.assert_array_equal(x_ini.y_ini, [102.0, 103.0])
        np.testing.assert_array_equal(x_ini.x_ini, [2.0, 102.0, 103.0])
        np.testing.assert_array_equal(x_ini.y_now, [103.0])

    def test_ini_window_before_history_raises(self):
        with self.assertRaises(InsufficientDataError):
            ini_window(ramp(9), 0, 2)

    def test_ini_window_with_single_sample_has_no_inputs(self):
        x_ini = ini_window(ramp(4), 2, 1)
        self.assertEqual(x_ini.u_ini.size, 0)
        np.testing.assert_array_equal(x_ini.x_ini, [102.0])

    def test_from_arrays_checks_lengths(self):
        with self.assertRaises(DimensionError):
            IniWindow.from_arrays([[1.0], [2.0]], [[0.0], [1.0]])

    def test_ini_windows_columns(self):
        X = ini_windows(ramp(5), 2)
        self.assertEqual(X.shape, (3, 5))
        np.testing.assert_array_equal(X[:, 0], [0.0, 100.0, 101.0])
        np.testing.assert_array_equal(X[:, -1], [4.0, 104.0, 105.0])


class HankelTest(SimpleTestCase):
    """Test cases for the Hankel data matrices."""

    def test_shapes_and_first_column(self):
        """Test T_ini=2, N=2 on nine samples: T = 6 gives seven columns."""
        hankels = build_hankels(ramp(9), T_ini=2, N=2)
        self.assertEqual(hankels.T, 6)
        self.assertEqual(hankels.columns, 7)
        self.assertEqual(hankels.U_p.shape, (1, 7))
        self.assertEqual(hankels.Y_p.shape, (2, 7))
        self.assertEqual(hankels.U_f.shape, (2, 7))
        self.assertEqual(hankels.Y_f.shape, (2, 7))
        np.testing.assert_array_equal(hankels.U_p[:, 0], [0.0])
        np.testing.assert_array_equal(hankels.Y_p[:, 0], [100.0, 101.0])
        np.testing.assert_array_equal(hankels.U_f[:, 0], [1.0, 2.0])
        np.testing.assert_array_equal(hankels.Y_f[:, 0], [102.0, 103.0])
        np.testing.assert_array_equal(hankels.Y_f[:, -1], [108.0, 109.0])

    def test_windows_match_ini_window(self):
        traj = ramp(9)
        hankels = build_hankels(traj, T_ini=2, N=2)
        for t in range(hankels.columns):
            np.testing.assert_array_equal(hankels.X_ini[:, t], ini_window(traj, 1 + t, 2).x_ini)

    def test_shifting_the_start_shifts_every_column(self):
        """Test that dropping the first sample moves every column index down by one."""
        rng = np.random.default_rng(2)
        traj = Trajectory(rng.normal(size=40), rng.normal(size=41))
        full = build_hankels(traj, T_ini=3, N=4)
        shifted = build_hankels(traj.segment(1, traj.num_steps), T_ini=3, N=4)
        self.assertEqual(shifted.columns, full.columns - 1)
        for name, matrix in shifted.tables().items():
            with self.subTest(block=name):
                np.testing.assert_array_equal(matrix, full.tables()[name][:, 1:])

    def test_linear_plant_future_outputs_follow_simulation(self):
        """Test Y_f against simulating x' = 0.5x + u ahead from the newest past output."""
        plant = make_plant("lti")
        traj = simulate(plant, [0.3], np.random.default_rng(3).uniform(-1.0, 1.0, 50))
        hankels = build_hankels(traj, T_ini=2, N=5)
        for t in range(hankels.columns):
            ahead = simulate(plant, [hankels.Y_p[-1, t]], hankels.U_f[:, t])
            np.testing.assert_allclose(hankels.Y_f[:, t], ahead.y[1:, 0], atol=1e-12)

    def test_too_few_samples_raises_with_minimum(self):
        with self.assertRaisesMessage(InsufficientDataError, "record at least 9 inputs"):
            build_hankels(ramp(8), T_ini=2, N=2)

    def test_invalid_horizons_raise(self):
        with self.assertRaises(ValueError):
            build_hankels(ramp(20), T_ini=0, N=2)
        with self.assertRaises(ValueError):
            build_hankels(ramp(20), T_ini=2, N=0)

    def test_lifted_blocks(self):
        """Test that Z_f column t stacks the lifted states t+1..t+N."""
        traj = ramp(9)
        lifted = np.vstack([np.arange(9.0), -np.arange(9.0)])
        hankels = build_hankels(traj, T_ini=2, N=2, lifted=lifted)
        self.assertEqual(hankels.Z_p.shape, (2, 7))
        self.assertEqual(hankels.Z_f.shape, (4, 7))
        np.testing.assert_array_equal(hankels.Z_p[:, 3], [3.0, -3.0])
        np.testing.assert_array_equal(hankels.Z_f[:, 3], [4.0, -4.0, 5.0, -5.0])
        self.assertIn("Z_f", hankels.tables())

    def test_short_lifted_sequence_raises(self):
        with self.assertRaises(DimensionError):
            build_hankels(ramp(9), T_ini=2, N=2, lifted=np.zeros((1, 8)))

    def test_required_columns(self):
        self.assertEqual(required_columns(1, 1, 2, 2), 6)

    def test_check_excitation(self):
        rng = np.random.default_rng(0)
        self.assertTrue(check_excitation(rng.normal(size=(2, 20)), rng.normal(size=(3, 20))).full_row_rank)
        report = check_excitation(np.ones((1, 20)), np.ones((2, 20)))
        self.assertEqual(report.rank, 1)
        with self.assertRaises(DimensionError):
            check_excitation(np.ones((1, 20)), np.ones((1, 19)))

    def test_dataset_manifest(self):
        hankels = build_hankels(ramp(9), T_ini=2, N=2)
        manifest = dataset_manifest(hankels, 6, 9, 3)
        self.assertEqual(manifest["columns"], 7)
        self.assertEqual(manifest["seed"], 3)


class SplitTest(SimpleTestCase):
    """Test cases for the chronological train/test split."""

    def test_split_is_chronological(self):
        train, test, split = split_trajectory(ramp(10), 0.7)
        self.assertEqual(split, 7)
        self.assertEqual(train.num_steps, 7)
        self.assertEqual(test.num_steps, 3)
        self.assertEqual(train.y[-1, 0], test.y[0, 0])

    def test_invalid_fraction_raises(self):
        with self.assertRaises(ValueError):
            split_trajectory(ramp(10), 1.0)
        with self.assertRaises(InsufficientDataError):
            split_trajectory(ramp(2), 0.1)
