import numpy as np
import pytest

from metronome.errors import NonQuadraticError, ParameterError
from metronome.moments import (
    gain_schedule,
    gamma_to_vec,
    init_error_from_states,
    make_cost_evaluator,
)
from metronome.optimizer import (
    FALLBACK_STEP,
    QuadraticForm,
    check_stationary_at_zero,
    gamma_from_json,
    gamma_to_json,
    recover_quadratic,
    solve_optimal,
    stationarity_scale,
)


def _squared_norm(v):
    return float(v @ v)


class TestRecoverQuadratic:
    def test_squared_norm(self):
        form = recover_quadratic(_squared_norm, 4)
        np.testing.assert_allclose(form.M, 2.0 * np.eye(4), atol=1e-12)
        np.testing.assert_allclose(form.b, 0.0, atol=1e-12)
        assert form.c == 0.0
        assert form.shape == (4,)
        assert form.n_evaluations == 1 + 2 * 4 + 6 + 10
        assert form.probe_residual <= 1e-12

    def test_shifted_square(self):
        form = recover_quadratic(lambda v: float((v[0] - 3.0) ** 2), 2)
        assert form.c == 9.0
        np.testing.assert_allclose(form.b, [-6.0, 0.0])
        assert form.M[0, 0] == pytest.approx(2.0)
        assert form.M[1, 1] == 0.0

        gamma, J = solve_optimal(form)
        np.testing.assert_allclose(gamma, [3.0, 0.0], atol=1e-12)
        assert J == pytest.approx(0.0, abs=1e-12)

    def test_design_size(self):
        d = 36
        calls = []

        def evaluate(v):
            calls.append(1)
            return _squared_norm(v)

        form = recover_quadratic(evaluate, d, n_probes=0)
        assert len(calls) == d * (d - 1) // 2 + 2 * d + 1 == 703
        assert form.n_evaluations == 703

    def test_rejects_quartic(self):
        with pytest.raises(NonQuadraticError, match="probe residual"):
            recover_quadratic(lambda v: float(np.sum(v**4)), 2)

    def test_falls_back_to_small_step(self):
        def evaluate(v):
            if np.abs(v).max() >= 0.5:
                return np.inf
            return _squared_norm(v)

        form = recover_quadratic(evaluate, 3)
        assert form.step == FALLBACK_STEP
        np.testing.assert_allclose(
            form.M, 2.0 * np.eye(3), rtol=1e-9, atol=1e-9
        )

    def test_non_finite_everywhere(self):
        with pytest.raises(NonQuadraticError, match="not finite"):
            recover_quadratic(lambda v: np.nan, 2)

    @pytest.mark.parametrize("kwargs", [dict(d=0), dict(d=2, step=0.0)])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ParameterError):
            recover_quadratic(_squared_norm, **kwargs)

    def test_threads_do_not_change_result(self, small_model, rng):
        model = small_model
        horizon = 50
        x0 = rng.uniform(-1.0, 1.0, model.dim)
        evaluate = make_cost_evaluator(
            model,
            init_error_from_states(x0, np.zeros(model.dim)),
            gain_schedule(model, np.eye(model.n_obs), horizon),
            1.0,
            5.4117,
            horizon,
        )
        d = model.n * model.n_obs
        serial = recover_quadratic(evaluate, d, threads=1)
        parallel = recover_quadratic(evaluate, d, threads=4)
        np.testing.assert_array_equal(serial.M, parallel.M)
        np.testing.assert_array_equal(serial.b, parallel.b)
        assert serial.c == parallel.c


class TestSolveOptimal:
    def test_zero_hessian(self):
        form = QuadraticForm(
            M=np.zeros((2, 2)), b=np.ones(2), c=1.0, shape=(2,)
        )
        gamma, J = solve_optimal(form)
        np.testing.assert_array_equal(gamma, np.zeros(2))
        assert J == 1.0

    def test_column_major_reshape(self):
        M = np.diag([1.0, 2.0, 4.0, 8.0])
        b = -np.array([1.0, 2.0, 4.0, 8.0])
        form = QuadraticForm(M=M, b=b, c=0.0, shape=(2, 2))
        gamma, J = solve_optimal(form)
        np.testing.assert_allclose(gamma, np.ones((2, 2)))
        assert J == pytest.approx(-7.5)

    def test_stationarity_helpers(self):
        form = QuadraticForm(
            M=np.diag([3.0, 4.0]), b=np.array([3.0, 4.0]), c=-2.0, shape=(2,)
        )
        assert check_stationary_at_zero(form) == 5.0
        assert stationarity_scale(form) == 7.0
        np.testing.assert_array_equal(form.gradient([-1.0, -1.0]), 0.0)


class TestGammaJson:
    def test_payload(self, model, rng):
        gamma = rng.standard_normal((model.n, model.n_obs))
        payload = gamma_to_json(gamma, source="optimize", J=1.5)
        assert payload["shape"] == [3, 12]
        assert payload["source"] == "optimize"
        np.testing.assert_array_equal(gamma_from_json(payload, model), gamma)

    @pytest.mark.parametrize(
        "payload",
        [
            {"gamma": [[1.0]]},
            {"shape": [1, 2], "gamma": [[1.0]]},
            {"shape": [1, 1], "gamma": [["x"]]},
        ],
    )
    def test_malformed(self, payload):
        with pytest.raises(ParameterError):
            gamma_from_json(payload)

    def test_wrong_model(self, small_model):
        payload = gamma_to_json(np.zeros((3, 12)))
        with pytest.raises(ParameterError, match="model needs"):
            gamma_from_json(payload, small_model)


@pytest.mark.slow
class TestCaseForms:
    def test_case1_zero_is_optimal(self, case1_form):
        form, _ = case1_form
        assert form.n_evaluations == 703 + 10
        scale = stationarity_scale(form)
        assert check_stationary_at_zero(form) <= 1e-8 * scale
        assert form.min_eigenvalue >= -1e-8 * np.linalg.norm(form.M)
        assert form.probe_residual <= 1e-8
        gamma, _ = solve_optimal(form)
        assert np.linalg.norm(gamma) <= 1e-6

    def test_case2_moves_away_from_zero(self, case1_form, case2_form):
        form1, _ = case1_form
        form2, evaluate = case2_form
        assert np.linalg.norm(form2.b) > 10.0 * np.linalg.norm(form1.b)

        gamma, J_star = solve_optimal(form2)
        assert np.linalg.norm(gamma) > 0.0
        J0 = evaluate(np.zeros(form2.d))
        direct = evaluate(gamma_to_vec(gamma))
        assert direct < J0
        assert direct == pytest.approx(J_star, rel=1e-6)

        v_star = gamma_to_vec(gamma)
        values = [evaluate(t * v_star) for t in np.linspace(0.0, 1.0, 11)]
        slack = 1e-12 * abs(J0)
        assert all(b <= a + slack for a, b in zip(values, values[1:]))

    def test_case2_optimum_is_stationary(self, case2_form):
        form, evaluate = case2_form
        gamma, J_star = solve_optimal(form)
        v_star = gamma_to_vec(gamma)
        eigenvalues, U = np.linalg.eigh(form.M)
        kept = eigenvalues > 1e-10 * eigenvalues[-1]
        assert kept.any()

        slopes = []
        for lam, u in zip(eigenvalues[kept], U[:, kept].T):
            h = min(1.0, np.sqrt(J_star / lam))
            rise = evaluate(v_star + h * u) - evaluate(v_star - h * u)
            slopes.append(rise / (2.0 * h))
        assert np.linalg.norm(slopes) <= 1e-6 * np.linalg.norm(form.b)
