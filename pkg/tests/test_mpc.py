import numpy as np
import pytest

from ddmpc import (
    InfeasibleStepError,
    InfeasibleTighteningError,
    LinearStageCost,
    MpcConfig,
    QuadraticStageCost,
    assemble,
    compute_coefficients,
    make_controller,
    n_step_apply,
    prediction_error_diagnostic,
    simulate,
    solve_qp,
    solve_step,
)
from conftest import HORIZON, NOISE_BOUND, ORDER


def example_mpc_config(**overrides):
    base = dict(
        horizon=HORIZON, order=ORDER, noise_bound=NOISE_BOUND,
        lambda_alpha=1.0 / NOISE_BOUND, lambda_sigma=100.0,
        stage_cost=LinearStageCost(c_u=[0.0], c_y=[-1.0]),
        u_lo=[-10.0], u_hi=[10.0], y_max=10.0,
        u_setpoint=[5.0], y_setpoint=[5.0],
    )
    base.update(overrides)
    return MpcConfig(**base)


def nominal_config(**overrides):
    base = dict(
        horizon=HORIZON, order=ORDER, noise_bound=0.0,
        lambda_alpha=0.0, lambda_sigma=1000.0,
        stage_cost=QuadraticStageCost(Q=[[1.5]], R=[[0.1]]),
        u_lo=[-10.0], u_hi=[10.0], y_max=float("inf"),
        u_setpoint=[0.0], y_setpoint=[0.0],
    )
    base.update(overrides)
    return MpcConfig(**base)


@pytest.fixture(scope="module")
def nominal_coeffs(example_constants):
    return compute_coefficients(example_constants, 0.0, HORIZON, ORDER)


@pytest.fixture(scope="module")
def example_controller(example_record, example_coeffs):
    return make_controller(example_mpc_config(), example_record, example_coeffs)


@pytest.fixture(scope="module")
def example_solution(example_controller):
    return solve_step(example_controller)


class TestConfig:
    def test_horizon_guard(self):
        with pytest.raises(ValueError):
            example_mpc_config(horizon=5)

    def test_setpoint_interior(self):
        with pytest.raises(ValueError):
            example_mpc_config(u_setpoint=[10.0])
        with pytest.raises(ValueError):
            example_mpc_config(y_setpoint=[10.0])

    def test_quadratic_weights_positive_definite(self):
        with pytest.raises(ValueError):
            QuadraticStageCost(Q=[[0.0]], R=[[1.0]])


class TestAssemble:
    def test_example_dimensions(self, example_record, example_coeffs):
        qp = assemble(example_mpc_config(), example_record, example_coeffs,
                      np.zeros((3, 1)), np.zeros((3, 1)))
        n_alpha = 988
        # alpha + sigma + ubar + ybar + u splits + alpha splits + 3 epigraphs
        assert qp.f.size == 3 * n_alpha + 13 * 3 + 2 * 10 + 3
        # dynamics + window + terminal + split definitions
        assert qp.a_eq.shape[0] == 26 + 6 + 6 + 10 + 1 + n_alpha + 1
        # box + split signs + slack band + tightened rows
        assert qp.a_in.shape[0] == 20 + 20 + 2 * n_alpha + 26 + 14

    def test_solves_feasible(self, example_record, example_coeffs):
        qp = assemble(example_mpc_config(), example_record, example_coeffs,
                      np.zeros((3, 1)), np.zeros((3, 1)))
        report = solve_qp(qp)
        assert report.optimal

    def test_unconstrained_output_drops_rows(self, clean_record, nominal_coeffs):
        qp = assemble(nominal_config(), clean_record, nominal_coeffs,
                      np.zeros((3, 1)), np.zeros((3, 1)))
        # only the input box remains; no epigraph variables exist
        assert qp.a_in.shape[0] == 20
        assert qp.f.size == 988 + 13 * 3

    def test_offsets_beyond_bound_rejected(self, example_record, example_constants):
        coeffs = compute_coefficients(example_constants, 0.01, HORIZON, ORDER)
        with pytest.raises(InfeasibleTighteningError):
            assemble(example_mpc_config(noise_bound=0.01), example_record, coeffs,
                     np.zeros((3, 1)), np.zeros((3, 1)))


class TestSolveStep:
    def test_reference_step_finite_and_sound(self, example_solution, example_coeffs):
        sol = example_solution
        assert sol.report.optimal
        assert np.isfinite(sol.objective)
        tol = 10 * sol.report.feas_tol
        # epigraph values dominate the true norms
        assert sol.t_u >= sol.u_norm1 - tol
        assert sol.t_alpha >= sol.alpha_norm1 - tol
        assert sol.t_sigma >= sol.sigma_norminf - tol
        # tightened rows hold with the true norms substituted
        for k in range(example_coeffs.count):
            lhs = (np.abs(sol.y_plan[ORDER + k]).max()
                   + example_coeffs.a1[k] * sol.u_norm1
                   + example_coeffs.a2[k] * sol.alpha_norm1
                   + example_coeffs.a3[k] * sol.sigma_norminf
                   + example_coeffs.a4[k])
            assert lhs <= 10.0 + tol

    def test_window_and_terminal_pinned(self, example_controller, example_solution):
        sol = example_solution
        tol = 10 * sol.report.feas_tol
        assert np.abs(sol.u_plan[:3] - example_controller.u_window).max() <= tol
        assert np.abs(sol.y_plan[:3] - example_controller.y_window).max() <= tol
        assert np.abs(sol.u_plan[-3:] - 5.0).max() <= tol
        assert np.abs(sol.y_plan[-3:] - 5.0).max() <= tol

    def test_dynamics_consistency(self, example_record, example_solution):
        from ddmpc import hankel

        sol = example_solution
        Hu = hankel(example_record.u_data(), 13).entries
        Hy = hankel(example_record.y_data("noisy"), 13).entries
        tol = 10 * sol.report.feas_tol
        assert np.abs(Hu @ sol.alpha - sol.u_plan.ravel()).max() <= tol
        assert np.abs(Hy @ sol.alpha - sol.y_plan.ravel() - sol.sigma).max() <= tol

    def test_inputs_respect_box(self, example_solution):
        assert np.abs(example_solution.u_plan[3:]).max() <= 10.0 + 1e-6

    def test_deterministic(self, example_controller):
        s1 = solve_step(example_controller)
        s2 = solve_step(example_controller)
        assert abs(s1.objective - s2.objective) <= 1e-9

    def test_origin_rest_is_trivial(self, clean_record, nominal_coeffs):
        state = make_controller(nominal_config(), clean_record, nominal_coeffs)
        sol = solve_step(state)
        assert sol.objective <= 1e-10
        assert np.abs(sol.u_plan).max() <= 1e-6
        assert np.abs(sol.y_plan).max() <= 1e-6
        assert sol.sigma_norminf <= 1e-8

    def test_nominal_prediction_is_exact(self, example_model, clean_record, nominal_coeffs):
        # noise-free data: predicted outputs equal the true response to the plan
        cfg = nominal_config(u_setpoint=[2.0], y_setpoint=[1.84])
        state = make_controller(cfg, clean_record, nominal_coeffs)
        sol = solve_step(state)
        traj = simulate(example_model, np.zeros(3), sol.u_plan[3:])
        assert np.abs(traj.y - sol.y_plan[3:]).max() <= 1e-6

    def test_infeasible_when_terminal_unreachable(self, clean_record, nominal_coeffs):
        cfg = nominal_config(u_lo=[-0.1], u_hi=[0.1], u_setpoint=[0.05],
                             y_setpoint=[5.0], y_max=10.0)
        coeffs = compute_coefficients(nominal_coeffs.constants, 0.0, HORIZON, ORDER)
        state = make_controller(cfg, clean_record, coeffs)
        with pytest.raises(InfeasibleStepError):
            solve_step(state)

    def test_cost_scaling_invariance(self, clean_record, nominal_coeffs):
        base = nominal_config(noise_bound=0.0, u_setpoint=[2.0], y_setpoint=[1.84])
        scaled = nominal_config(
            noise_bound=0.0, u_setpoint=[2.0], y_setpoint=[1.84],
            stage_cost=QuadraticStageCost(Q=[[1.5 * 4]], R=[[0.1 * 4]]),
            lambda_sigma=1000.0 * 4)
        s_base = solve_step(make_controller(base, clean_record, nominal_coeffs))
        s_scaled = solve_step(make_controller(scaled, clean_record, nominal_coeffs))
        assert s_scaled.objective == pytest.approx(4 * s_base.objective, rel=1e-5, abs=1e-8)
        assert np.abs(s_scaled.u_plan - s_base.u_plan).max() <= 1e-5

    def test_slack_check_recorded(self, example_solution):
        assert isinstance(example_solution.slack_check_ok, bool)

    def test_large_instance_relaxed_tolerance_recorded(self, example_solution):
        # 988-column weight vector triggers the relaxed feasibility tolerance
        assert example_solution.report.feas_tol == 1e-6


class TestNStepApply:
    def test_emits_order_many_inputs(self, example_controller, example_solution):
        inputs, advanced = n_step_apply(example_controller, example_solution)
        assert inputs.shape == (3, 1)
        assert advanced.t == example_controller.t + 3
        assert np.array_equal(inputs, example_solution.u_plan[3:6])

    def test_two_applies_advance_two_blocks(self, example_controller, example_solution):
        _, s1 = n_step_apply(example_controller, example_solution)
        _, s2 = n_step_apply(s1, example_solution)
        assert s2.t == 6

    def test_window_refresh(self, example_controller, example_solution):
        inputs, advanced = n_step_apply(example_controller, example_solution)
        measured = np.full((3, 1), 0.25)
        refreshed = advanced.with_window(inputs, measured)
        assert np.array_equal(refreshed.u_window, inputs)
        assert np.array_equal(refreshed.y_window, measured)
        assert refreshed.template is advanced.template  # structure reused

    def test_rejects_non_optimal(self, example_controller, example_solution):
        from dataclasses import replace

        bad_report = replace(example_solution.report, status="infeasible")
        bad = replace(example_solution, report=bad_report)
        with pytest.raises(ValueError):
            n_step_apply(example_controller, bad)


class TestPredictionDiagnostic:
    def test_nominal_error_vanishes(self, example_model, clean_record,
                                    nominal_coeffs, example_constants):
        cfg = nominal_config(u_setpoint=[2.0], y_setpoint=[1.84])
        sol = solve_step(make_controller(cfg, clean_record, nominal_coeffs))
        errors, bounds = prediction_error_diagnostic(
            sol, example_model, np.zeros(3), example_constants, 0.0)
        assert errors.max() <= 1e-8

    def test_reference_error_within_bound(self, example_model, example_solution,
                                          example_constants):
        errors, bounds = prediction_error_diagnostic(
            example_solution, example_model, np.zeros(3), example_constants,
            NOISE_BOUND)
        assert np.all(errors <= bounds + 1e-12)

    def test_bound_grows_with_final_gain(self, example_solution, example_constants,
                                         example_model):
        errors, bounds = prediction_error_diagnostic(
            example_solution, example_model, np.zeros(3), example_constants,
            NOISE_BOUND)
        # gains rise from step n to step L + n - 1 for this plant
        assert bounds[-1] > bounds[0]
