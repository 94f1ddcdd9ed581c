import numpy as np
import pandas as pd
import pytest

from metronome.data import simulate
from metronome.errors import ParameterError
from metronome.filters import run_skf
from metronome.models import ModelParams, build_decomposition, build_model
from metronome.moments import (
    SCHEDULE_CACHE_SIZE,
    InitError,
    TaMoments,
    clear_schedule_cache,
    confidence_interval,
    cost_J,
    gain_schedule,
    gamma_to_vec,
    ideal_ta_moments,
    init_error_from_states,
    make_cost_evaluator,
    moments_from_frame,
    moments_to_frame,
    structured_init_error,
    ta_moments,
    vec_to_gamma,
    weighted_cost,
)
from metronome.optimizer import solve_optimal

HORIZON = 200


@pytest.fixture(scope="module")
def schedule(model):
    return gain_schedule(model, 1e-4 * np.eye(model.n_obs), HORIZON)


def _random_gamma(model, rng, scale=1.0):
    return scale * rng.standard_normal((model.n, model.n_obs))


class TestGainSchedule:
    def test_cached(self, model):
        P_hat0 = 1e-3 * np.eye(model.n_obs)
        a = gain_schedule(model, P_hat0, 5)
        assert gain_schedule(model, P_hat0.copy(), 5) is a
        assert gain_schedule(model, P_hat0, 6) is not a
        clear_schedule_cache()
        assert gain_schedule(model, P_hat0, 5) is not a

    def test_cache_is_bounded(self, small_model):
        clear_schedule_cache()
        P_hat0 = np.eye(small_model.n_obs)
        first = gain_schedule(small_model, P_hat0, 1)
        last = None
        for horizon in range(2, SCHEDULE_CACHE_SIZE + 2):
            last = gain_schedule(small_model, P_hat0, horizon)
        assert gain_schedule(small_model, P_hat0, horizon) is last
        assert gain_schedule(small_model, P_hat0, 1) is not first

    def test_zero_noise_zero_gains(self):
        model = build_model(
            ModelParams(n=2, m=3, tau=1.0, q_sq=[0.0, 0.0], r_sq=1.0)
        )
        schedule = gain_schedule(model, np.zeros((4, 4)), 10)
        assert not schedule.gains.any()
        assert not schedule.covariances.any()

    @pytest.mark.parametrize("horizon", [0, 1.5, True])
    def test_invalid_horizon(self, model, horizon):
        with pytest.raises(ParameterError):
            gain_schedule(model, np.eye(model.n_obs), horizon)


class TestTaMoments:
    def test_zero_everything(self):
        model = build_model(
            ModelParams(n=2, m=3, tau=1.0, q_sq=[0.0, 0.0], r_sq=1.0)
        )
        init = InitError(np.zeros(6), np.zeros((6, 6)))
        schedule = gain_schedule(model, np.zeros((4, 4)), 20)
        moments = ta_moments(
            model, build_decomposition(model), init, schedule, 20
        )
        assert not moments.mean.any()
        assert not moments.var.any()
        assert moments.horizon == 20

    def test_initial_mean(self, model, schedule, case2_init, rng):
        decomp = build_decomposition(model, _random_gamma(model, rng))
        moments = ta_moments(model, decomp, case2_init, schedule, 10)
        assert moments.mean[0] == pytest.approx(
            (model.D @ case2_init.mu0)[0], rel=1e-14
        )
        assert moments.var[0] == 0.0

    def test_common_start_zero_gamma(self, model, schedule):
        mu_hat0 = np.array([3e-8, -2e-9, 1e-11])
        init = structured_init_error(
            model, mu_hat0, np.zeros((model.n, model.n)), 0.0
        )
        moments = ta_moments(
            model, build_decomposition(model), init, schedule, 50
        )
        expected = [
            (model.C @ np.linalg.matrix_power(model.A, k) @ mu_hat0)[0]
            for k in range(51)
        ]
        np.testing.assert_allclose(moments.mean, expected, rtol=1e-10)

        J = cost_J(
            model, np.zeros((model.n, model.n_obs)), init, schedule, 1, 0, 50
        )
        assert J == pytest.approx(np.sum(np.square(expected)), rel=1e-10)

    def test_zero_gamma_matches_ideal(self, model, schedule, case2_init):
        Q0 = 1e-16 * np.eye(model.dim)
        init = InitError(case2_init.mu0, Q0)
        structured = ta_moments(
            model, build_decomposition(model), init, schedule, HORIZON
        )
        ideal = ideal_ta_moments(model, init, HORIZON)
        np.testing.assert_allclose(
            structured.mean,
            ideal.mean,
            rtol=1e-10,
            atol=1e-10 * np.abs(ideal.mean).max(),
        )
        np.testing.assert_allclose(
            structured.var,
            ideal.var,
            rtol=1e-10,
            atol=1e-10 * ideal.var.max(),
        )

    def test_mean_is_affine_in_gamma(self, model, schedule, case2_init, rng):
        a = _random_gamma(model, rng, 0.1)
        b = _random_gamma(model, rng, 0.1)
        t = 0.3

        def mean(gamma):
            return ta_moments(
                model,
                build_decomposition(model, gamma),
                case2_init,
                schedule,
                HORIZON,
            ).mean

        expected = (1 - t) * mean(a) + t * mean(b)
        assert np.linalg.norm(
            mean((1 - t) * a + t * b) - expected
        ) <= 1e-9 * np.linalg.norm(expected)

    def test_variance_non_negative(self, model, schedule, case2_init, rng):
        decomp = build_decomposition(model, _random_gamma(model, rng))
        moments = ta_moments(model, decomp, case2_init, schedule, HORIZON)
        assert np.all(moments.var >= 0.0)
        np.testing.assert_allclose(moments.std, np.sqrt(moments.var))

    def test_matches_full_space_propagation(self, small_model, rng):
        model = small_model
        horizon = 60
        root = rng.standard_normal((model.dim, model.dim))
        init = InitError(rng.standard_normal(model.dim), 0.1 * root @ root.T)
        decomp = build_decomposition(model, _random_gamma(model, rng))
        schedule = gain_schedule(model, np.eye(model.n_obs), horizon)
        moments = ta_moments(model, decomp, init, schedule, horizon)

        d = model.D[0]
        m_k, S = init.mu0, init.Q0
        mean, var = [], []
        for k in range(horizon + 1):
            mean.append(d @ m_k)
            var.append(d @ S @ d)
            if k < horizon:
                G = decomp.gain_lift @ schedule.gains[k]
                Phi = model.F + G @ model.H
                m_k = Phi @ m_k
                S = Phi @ S @ Phi.T + G @ model.R @ G.T + model.W
        np.testing.assert_allclose(moments.mean, mean, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(moments.var, var, rtol=1e-9)

    def test_short_schedule(self, model, case1_init):
        schedule = gain_schedule(model, 1e-4 * np.eye(model.n_obs), 5)
        with pytest.raises(ParameterError, match="covers"):
            ta_moments(
                model, build_decomposition(model), case1_init, schedule, 6
            )

    def test_dimension_mismatch(self, small_model, case1_init):
        small_schedule = gain_schedule(
            small_model, 1e-4 * np.eye(small_model.n_obs), 5
        )
        with pytest.raises(ParameterError, match="dimension"):
            ta_moments(
                small_model,
                build_decomposition(small_model),
                case1_init,
                small_schedule,
                5,
            )


class TestCost:
    def test_matches_weighted_moments(self, model, schedule, case2_init, rng):
        gamma = _random_gamma(model, rng)
        moments = ta_moments(
            model,
            build_decomposition(model, gamma),
            case2_init,
            schedule,
            HORIZON,
        )
        expected = weighted_cost(moments, 1.0, 5.4117)
        assert cost_J(
            model, gamma, case2_init, schedule, 1.0, 5.4117, HORIZON
        ) == expected
        assert expected == pytest.approx(
            np.sum(moments.mean**2) + 5.4117 * np.sum(moments.var)
        )

    def test_evaluator_uses_column_major_vectors(
        self, model, schedule, case2_init, rng
    ):
        gamma = _random_gamma(model, rng)
        evaluate = make_cost_evaluator(
            model, case2_init, schedule, 1.0, 5.4117, HORIZON
        )
        expected = cost_J(
            model, gamma, case2_init, schedule, 1.0, 5.4117, HORIZON
        )
        assert evaluate(gamma_to_vec(gamma)) == pytest.approx(
            expected, rel=1e-12
        )

    def test_vectorization_layout(self, model):
        gamma = np.arange(model.n * model.n_obs, dtype=float).reshape(
            model.n, model.n_obs
        )
        v = gamma_to_vec(gamma)
        assert v[1] == gamma[1, 0]
        assert v[model.n] == gamma[0, 1]
        np.testing.assert_array_equal(vec_to_gamma(v, model), gamma)

    def test_convex_along_lines(self, model, schedule, case2_init, rng):
        evaluate = make_cost_evaluator(
            model, case2_init, schedule, 1.0, 5.4117, HORIZON
        )
        d = model.n * model.n_obs
        for _ in range(50):
            a = rng.standard_normal(d)
            b = rng.standard_normal(d)
            Ja, Jb = evaluate(a), evaluate(b)
            assert evaluate(0.5 * (a + b)) <= 0.5 * (Ja + Jb) * (1 + 1e-10)

    def test_quadratic_along_direction(
        self, model, schedule, case2_init, rng
    ):
        evaluate = make_cost_evaluator(
            model, case2_init, schedule, 1.0, 5.4117, HORIZON
        )
        d = model.n * model.n_obs
        origin = rng.standard_normal(d)
        direction = rng.standard_normal(d)
        f = [evaluate(origin + t * direction) for t in (-1.0, 0.0, 1.0, 2.0)]
        third = f[3] - 3 * f[2] + 3 * f[1] - f[0]
        assert abs(third) <= 1e-8 * max(abs(v) for v in f)

    def test_quadratic_at_full_horizon(self, model, case1_init, rng):
        horizon = 1000
        schedule = gain_schedule(model, 1e-4 * np.eye(model.n_obs), horizon)
        evaluate = make_cost_evaluator(
            model, case1_init, schedule, 1.0, 5.4117, horizon
        )
        direction = rng.standard_normal(model.n * model.n_obs)
        f = {t: evaluate(t * direction) for t in (-2, -1, 0, 1, 2, 3)}
        c = f[0]
        b = 0.5 * (f[1] - f[-1])
        a = 0.5 * (f[1] + f[-1]) - c
        for t in (-2, 2, 3):
            assert a * t**2 + b * t + c == pytest.approx(f[t], rel=1e-8)
        assert f[2] == pytest.approx(f[-2], rel=1e-12)
        assert c < 1e-6 * f[1]

    @pytest.mark.parametrize(
        "weights", [(0.0, 0.0), (-1.0, 1.0), (1.0, -0.5)]
    )
    def test_invalid_weights(self, model, schedule, case1_init, weights):
        gamma = np.zeros((model.n, model.n_obs))
        with pytest.raises(ParameterError):
            cost_J(model, gamma, case1_init, schedule, *weights, 10)
        with pytest.raises(ParameterError):
            make_cost_evaluator(model, case1_init, schedule, *weights, 10)


class TestInitError:
    def test_from_states(self):
        init = init_error_from_states([1.0, 2.0], [0.5, 0.5])
        np.testing.assert_array_equal(init.mu0, [0.5, 1.5])
        assert not init.Q0.any()
        assert init.dim == 2

    def test_structured(self, small_model):
        init = structured_init_error(
            small_model, [1.0, 2.0], np.eye(2), 0.5
        )
        np.testing.assert_array_equal(init.mu0, [1, 1, 1, 2, 2, 2])
        np.testing.assert_array_equal(init.Q0, 0.5 * np.eye(6))

    @pytest.mark.parametrize(
        "mu0, Q0",
        [
            (np.zeros(2), np.zeros((3, 3))),
            (np.array([np.nan, 0.0]), np.zeros((2, 2))),
            (np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]])),
            (np.zeros(2), np.diag([1.0, -1.0])),
        ],
    )
    def test_invalid(self, mu0, Q0):
        with pytest.raises(ParameterError):
            InitError(mu0, Q0)

    def test_invalid_structured(self, small_model):
        with pytest.raises(ParameterError):
            structured_init_error(small_model, [1.0], np.eye(2), 1.0)
        with pytest.raises(ParameterError):
            structured_init_error(small_model, [1.0, 2.0], np.eye(2), -1.0)


class TestConfidenceInterval:
    def test_98_percent(self):
        moments = TaMoments(
            mean=np.array([0.0, 1.0]), var=np.array([1.0, 0.0]), horizon=1
        )
        lo, hi = confidence_interval(moments, 0.98)
        np.testing.assert_allclose(hi, [2.326348, 1.0], rtol=1e-6)
        np.testing.assert_allclose(lo, [-2.326348, 1.0], rtol=1e-6)

    def test_monotone_in_level(self):
        moments = TaMoments(mean=np.zeros(3), var=np.ones(3), horizon=2)
        widths = [
            np.diff(confidence_interval(moments, level), axis=0)[0]
            for level in (0.5, 0.9, 0.98)
        ]
        assert np.all(widths[0] < widths[1])
        assert np.all(widths[1] < widths[2])

    @pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
    def test_invalid_level(self, level):
        moments = TaMoments(mean=np.zeros(1), var=np.ones(1), horizon=0)
        with pytest.raises(ParameterError):
            confidence_interval(moments, level)

    def test_frame(self):
        moments = TaMoments(
            mean=np.array([0.0, 1e-9, 2e-9]),
            var=np.array([0.0, 1e-18, 4e-18]),
            horizon=2,
        )
        frame = moments_to_frame(moments)
        assert list(frame.columns) == ["k", "mean", "var", "lo98", "hi98"]
        pd.testing.assert_series_equal(
            frame["k"], pd.Series([0, 1, 2], name="k")
        )
        back = moments_from_frame(frame)
        np.testing.assert_array_equal(back.mean, moments.mean)
        assert back.horizon == 2
        assert "lo90" in moments_to_frame(moments, 0.9).columns


def _monte_carlo_ta(model, decomp, schedule, x0, x_hat0, horizon, n_paths):
    ta = np.empty((n_paths, horizon + 1))
    for i in range(n_paths):
        trace = simulate(model, x0, horizon, seed=i)
        run = run_skf(model, decomp, trace.y, x_hat0, schedule=schedule)
        ta[i] = trace.z - run.x_hat @ model.D[0]
    return ta


def _check_against_samples(moments, ta, steps):
    n_paths = ta.shape[0]
    for k in steps:
        sample_mean = ta[:, k].mean()
        bound = 4.0 * np.sqrt(moments.var[k] / n_paths)
        assert abs(sample_mean - moments.mean[k]) <= bound
        sample_var = ta[:, k].var(ddof=1)
        assert abs(sample_var / moments.var[k] - 1.0) < 0.2


@pytest.mark.slow
class TestMonteCarlo:
    def test_small_model_random_gamma(self, small_model, rng):
        model = small_model
        horizon = 100
        x0 = rng.uniform(-1.0, 1.0, model.dim)
        x_hat0 = np.zeros(model.dim)
        decomp = build_decomposition(model, _random_gamma(model, rng, 0.5))
        schedule = gain_schedule(model, np.eye(model.n_obs), horizon)
        moments = ta_moments(
            model,
            decomp,
            init_error_from_states(x0, x_hat0),
            schedule,
            horizon,
        )
        ta = _monte_carlo_ta(
            model, decomp, schedule, x0, x_hat0, horizon, 2000
        )
        _check_against_samples(moments, ta, (10, 50, 100))

    def test_case1_zero_gamma(self, model, case1_states, case1_init):
        horizon = 1000
        x0, x_hat0 = case1_states
        decomp = build_decomposition(model)
        schedule = gain_schedule(model, 1e-4 * np.eye(model.n_obs), horizon)
        moments = ta_moments(model, decomp, case1_init, schedule, horizon)
        ta = _monte_carlo_ta(
            model, decomp, schedule, x0, x_hat0, horizon, 1000
        )
        _check_against_samples(moments, ta, (10, 100, 1000))

    def test_case2_optimal_gamma(self, model, case2_states, case2_form):
        horizon = 1000
        x0, x_hat0 = case2_states
        form, _ = case2_form
        gamma, _ = solve_optimal(form)
        assert np.linalg.norm(gamma) > 0.0
        decomp = build_decomposition(model, gamma)
        schedule = gain_schedule(model, 1e-4 * np.eye(model.n_obs), horizon)
        moments = ta_moments(
            model,
            decomp,
            init_error_from_states(x0, x_hat0),
            schedule,
            horizon,
        )
        ta = _monte_carlo_ta(
            model, decomp, schedule, x0, x_hat0, horizon, 1000
        )
        _check_against_samples(moments, ta, (10, 100, 1000))
