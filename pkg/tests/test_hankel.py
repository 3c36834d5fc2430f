import numpy as np
import pytest

from ddmpc import (
    DataRecord,
    Trajectory,
    build_H_uxi,
    extended_state_sequence,
    hankel,
    is_persistently_exciting,
    load_record,
    membership_residual,
    realize_transfer_function,
    save_record,
    simulate,
    trajectory_from_alpha,
    zero_input_output_basis,
)
from ddmpc.hankel import DegenerateDataError


class TestHankel:
    def test_small_example(self):
        H = hankel([1.0, 2.0, 3.0, 4.0], 2)
        assert np.array_equal(H.entries, [[1, 2, 3], [2, 3, 4]])

    def test_constant_signal_rank_one(self):
        H = hankel(np.full(20, 3.7), 4)
        assert np.linalg.matrix_rank(H.entries) == 1

    def test_shape_law_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            N = rng.integers(3, 40)
            q = rng.integers(1, 4)
            L = rng.integers(1, N + 1)
            sig = rng.normal(size=(N, q))
            H = hankel(sig, L)
            assert H.entries.shape == (q * L, N - L + 1)

    def test_block_structure(self):
        rng = np.random.default_rng(1)
        sig = rng.normal(size=(9, 2))
        H = hankel(sig, 3)
        for i in range(3):
            for j in range(7):
                assert np.array_equal(H.entries[2 * i:2 * i + 2, j], sig[i + j])

    def test_too_short(self):
        with pytest.raises(ValueError):
            hankel([1.0, 2.0], 3)

    def test_example_sizes(self):
        sig = np.arange(1000.0)
        assert hankel(sig, 13).entries.shape == (13, 988)


class TestPersistentExcitation:
    def test_zero_signal(self):
        report = is_persistently_exciting(np.zeros(30), 3)
        assert report.rank == 0 and not report.is_pe

    def test_impulse_order_one(self):
        u = np.zeros(50)
        u[10] = 1.0
        report = is_persistently_exciting(u, 1)
        assert report.rank == 1 and report.is_pe

    def test_example_data_order(self, example_record):
        report = is_persistently_exciting(example_record.u_data(), 16)
        assert report.is_pe
        assert report.required == 16
        assert report.smallest_retained_sv > 1.0

    def test_monotone_in_order(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            u = rng.normal(size=30)
            reports = {k: is_persistently_exciting(u, k).is_pe for k in range(1, 8)}
            for k in range(2, 8):
                if reports[k]:
                    assert all(reports[j] for j in range(1, k))


class TestDataRecord:
    def test_lengths_and_views(self, example_record):
        assert example_record.N == 1000
        assert example_record.u.shape == (1003, 1)
        assert example_record.u_data().shape == (1000, 1)
        assert np.abs(example_record.y_noisy - example_record.y).max() <= 1e-4

    def test_bound_violation_rejected(self):
        y = np.zeros((10, 1))
        with pytest.raises(ValueError):
            DataRecord(u=np.zeros((10, 1)), y=y, y_noisy=y + 0.2,
                       noise_bound=0.1, seed=0, order=2)

    def test_unequal_lengths_rejected(self):
        with pytest.raises(ValueError):
            DataRecord(u=np.zeros((10, 1)), y=np.zeros((9, 1)),
                       y_noisy=np.zeros((9, 1)), noise_bound=0.0, seed=0, order=2)

    def test_csv_roundtrip_bit_exact(self, tmp_path, example_record):
        path = tmp_path / "record.csv"
        save_record(example_record, path)
        loaded = load_record(path)
        assert np.array_equal(loaded.u, example_record.u)
        assert np.array_equal(loaded.y, example_record.y)
        assert np.array_equal(loaded.y_noisy, example_record.y_noisy)
        assert loaded.seed == example_record.seed
        assert loaded.order == example_record.order


class TestTrajectoryFromAlpha:
    def test_unit_vector_selects_window(self, clean_record):
        alpha = np.zeros(988)
        alpha[0] = 1.0
        traj = trajectory_from_alpha(clean_record, 13, alpha)
        assert np.array_equal(traj.u, clean_record.u_data()[:13])
        assert np.array_equal(traj.y, clean_record.y_data()[:13])

    def test_zero_alpha(self, clean_record):
        traj = trajectory_from_alpha(clean_record, 13, np.zeros(988))
        assert np.all(traj.u == 0) and np.all(traj.y == 0)

    def test_sum_of_windows_is_member(self, clean_record):
        alpha = np.zeros(988)
        alpha[0] = alpha[1] = 1.0
        traj = trajectory_from_alpha(clean_record, 13, alpha)
        residual, _ = membership_residual(clean_record, traj)
        assert residual <= 1e-8

    def test_length_mismatch(self, clean_record):
        with pytest.raises(ValueError):
            trajectory_from_alpha(clean_record, 13, np.zeros(10))


class TestMembership:
    def test_simulated_trajectories_are_members(self, example_model, clean_record):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x0 = rng.normal(size=3) * 5
            u = rng.uniform(-10, 10, size=(13, 1))
            traj = simulate(example_model, x0, u)
            residual, alpha = membership_residual(clean_record, traj)
            assert residual <= 1e-8
            rebuilt = trajectory_from_alpha(clean_record, 13, alpha)
            assert np.abs(rebuilt.y - traj.y).max() <= 1e-7

    def test_zero_trajectory(self, clean_record):
        residual, alpha = membership_residual(
            clean_record, Trajectory(np.zeros((13, 1)), np.zeros((13, 1))))
        assert residual == 0.0
        assert np.all(alpha == 0.0)

    def test_other_plant_is_not_member(self, clean_record):
        other = realize_transfer_function([-0.02, -0.061, -0.011],
                                          [1.0, -2.1, 1.5, -0.3])
        rng = np.random.default_rng(6)
        u = rng.uniform(-10, 10, size=(13, 1))
        traj = simulate(other, rng.normal(size=3), u)
        residual, _ = membership_residual(clean_record, traj)
        assert residual >= 1e-3


class TestZeroInputBasis:
    def test_dimension_equals_order(self, clean_record):
        for window in (3, 5, 8):
            basis = zero_input_output_basis(clean_record, window)
            assert basis.shape == (window, 3)

    def test_spans_r3_for_window_n(self, clean_record):
        basis = zero_input_output_basis(clean_record, 3)
        assert np.linalg.matrix_rank(basis) == 3

    def test_columns_are_members_with_zero_input(self, clean_record):
        basis = zero_input_output_basis(clean_record, 6)
        for j in range(basis.shape[1]):
            traj = Trajectory(np.zeros((6, 1)), basis[:, j].reshape(6, 1))
            residual, _ = membership_residual(clean_record, traj)
            assert residual <= 1e-8

    def test_degenerate_window_raises(self, clean_record):
        # a window this deep leaves the input Hankel map with no nullspace
        with pytest.raises((DegenerateDataError, ValueError)):
            zero_input_output_basis(clean_record, 999)


class TestExtendedStates:
    def test_constant_data(self):
        u = np.full((20, 1), 2.0)
        y = np.full((20, 1), 3.0)
        record = DataRecord(u=u, y=y, y_noisy=y, noise_bound=0.0, seed=0, order=2)
        xi = extended_state_sequence(record)
        assert xi.shape == (18, 4)
        assert np.all(xi == xi[0])
        assert np.array_equal(xi[0], [2.0, 2.0, 3.0, 3.0])

    def test_example_sizes(self, example_record):
        xi = extended_state_sequence(example_record, count=988)
        assert xi.shape == (988, 6)

    def test_views_differ_only_in_outputs(self, example_record):
        xi_clean = extended_state_sequence(example_record, view="clean", count=100)
        xi_noisy = extended_state_sequence(example_record, view="noisy", count=100)
        assert np.array_equal(xi_clean[:, :3], xi_noisy[:, :3])
        assert np.abs(xi_clean[:, 3:] - xi_noisy[:, 3:]).max() <= 1e-4

    def test_stacking_order_inputs_first(self, example_record):
        xi = extended_state_sequence(example_record, count=5)
        k = 4
        assert np.array_equal(xi[k, :3], example_record.u[k:k + 3, 0])
        assert np.array_equal(xi[k, 3:], example_record.y[k:k + 3, 0])


class TestBuildHuxi:
    def test_example_shape(self, example_record):
        H = build_H_uxi(example_record, 10)
        assert H.shape == (19, 988)

    def test_zero_data(self):
        z = np.zeros((30, 1))
        record = DataRecord(u=z, y=z, y_noisy=z, noise_bound=0.0, seed=0, order=2)
        assert np.all(build_H_uxi(record, 4) == 0.0)

    def test_top_block_is_input_hankel(self, example_record):
        H = build_H_uxi(example_record, 10)
        Hu = hankel(example_record.u_data(), 13).entries
        assert np.array_equal(H[:13], Hu)
