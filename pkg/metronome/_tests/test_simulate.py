from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest

from metronome import utils
from metronome.data import (
    noise_generators,
    path_seed,
    psd_sqrt,
    simulate,
    trace_from_frame,
    trace_to_frame,
)
from metronome.errors import FactorizationError, ParameterError
from metronome.models import ModelParams, build_model


@pytest.fixture(scope="module")
def noiseless_model():
    return build_model(
        ModelParams(n=2, m=3, tau=1.0, q_sq=[0.0, 0.0], r_sq=0.0)
    )


class TestPsdSqrt:
    def test_identity(self):
        L = psd_sqrt(np.eye(3))
        np.testing.assert_allclose(L @ L.T, np.eye(3), atol=1e-15)

    def test_rank_deficient(self):
        S = np.diag([4.0, 0.0])
        L = psd_sqrt(S)
        np.testing.assert_allclose(L @ L.T, S, atol=1e-15)

    def test_third_order_noise(self, model):
        S = model.W_single
        L = psd_sqrt(S)
        assert np.linalg.norm(L @ L.T - S) <= 1e-12 * np.linalg.norm(S)

    def test_tiny_negative_clipped(self):
        S = np.diag([1.0, -1e-14])
        L = psd_sqrt(S)
        np.testing.assert_allclose(L @ L.T, np.diag([1.0, 0.0]))

    def test_indefinite(self):
        with pytest.raises(FactorizationError, match="eigenvalue"):
            psd_sqrt(np.diag([1.0, -0.5]))

    def test_asymmetric(self):
        with pytest.raises(ParameterError):
            psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestNoiseGenerators:
    def test_path_seeds(self):
        assert [path_seed(10, i) for i in range(3)] == [10, 11, 12]

    def test_measurement_substream(self):
        process_a, measurement_a = noise_generators(5)
        process_b, measurement_b = noise_generators(5, measurement_seed=1)
        np.testing.assert_array_equal(
            process_a.standard_normal(4), process_b.standard_normal(4)
        )
        assert not np.array_equal(
            measurement_a.standard_normal(4),
            measurement_b.standard_normal(4),
        )

    @pytest.mark.parametrize("seed", [-1, 1.5, "1", True])
    def test_invalid_seed(self, seed):
        with pytest.raises(ParameterError):
            noise_generators(seed)


class TestSimulate:
    def test_noiseless_zero_start(self, noiseless_model):
        trace = simulate(noiseless_model, np.zeros(6), 20, seed=0)
        assert not trace.x.any()
        assert not trace.y.any()

    def test_unit_frequency_offset(self, noiseless_model):
        x0 = np.concatenate([np.zeros(3), np.ones(3)])
        trace = simulate(noiseless_model, x0, 10, seed=0)
        for clock in range(3):
            np.testing.assert_array_equal(trace.x[:, clock], np.arange(11))

    def test_noiseless_measurements(self, noiseless_model, rng):
        model = noiseless_model
        x0 = rng.standard_normal(model.dim)
        trace = simulate(model, x0, 15, seed=3)
        for k in range(15):
            np.testing.assert_allclose(
                trace.y[k],
                model.H @ np.linalg.matrix_power(model.F, k) @ x0,
                atol=1e-12,
            )

    def test_shapes_and_ensemble_time(self, model):
        trace = simulate(model, np.zeros(model.dim), 50, seed=1)
        assert trace.x.shape == (51, model.dim)
        assert trace.y.shape == (50, model.m - 1)
        assert trace.z.shape == (51,)
        np.testing.assert_allclose(
            trace.z, trace.x @ model.D[0], rtol=1e-12, atol=1e-20
        )
        np.testing.assert_allclose(
            trace.y, trace.x[:-1] @ model.H.T + trace.w, rtol=1e-12
        )

    def test_deterministic(self, model):
        a = simulate(model, np.zeros(model.dim), 100, seed=7)
        b = simulate(model, np.zeros(model.dim), 100, seed=7)
        c = simulate(model, np.zeros(model.dim), 100, seed=8)
        assert a.x.tobytes() == b.x.tobytes()
        assert a.y.tobytes() == b.y.tobytes()
        assert not np.array_equal(a.x, c.x)

    def test_measurement_rerandomized(self, model):
        a = simulate(model, np.zeros(model.dim), 100, seed=7)
        b = simulate(model, np.zeros(model.dim), 100, 7, measurement_seed=2)
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.x, b.x)
        assert not np.array_equal(a.w, b.w)

    def test_increment_covariance(self, model):
        samples = []
        for i in range(10):
            trace = simulate(model, np.zeros(model.dim), 1000, seed=i)
            samples.append(trace.x[1:] - trace.x[:-1] @ model.F.T)
        v = np.vstack(samples)
        m = model.m
        for level in range(model.n):
            values = v[:, level * m : (level + 1) * m].ravel()
            expected = model.W_single[level, level]
            assert abs(np.mean(values**2) / expected - 1.0) < 0.15

    def test_noise_whiteness(self, model):
        K = 10_000
        trace = simulate(model, np.zeros(model.dim), K, seed=11)
        series = trace.v[:, 0] - trace.v[:, 0].mean()
        for lag in range(1, 6):
            rho = np.corrcoef(series[:-lag], series[lag:])[0, 1]
            assert abs(rho) < 4.0 / np.sqrt(K)

    @pytest.mark.parametrize("horizon", [0, -3, 2.5])
    def test_invalid_horizon(self, model, horizon):
        with pytest.raises(ParameterError):
            simulate(model, np.zeros(model.dim), horizon, seed=0)

    def test_invalid_start(self, model):
        with pytest.raises(ParameterError):
            simulate(model, np.zeros(3), 10, seed=0)
        x0 = np.zeros(model.dim)
        x0[0] = np.nan
        with pytest.raises(ParameterError):
            simulate(model, x0, 10, seed=0)


class TestTraceFrame:
    def test_columns(self, small_model):
        trace = simulate(small_model, np.zeros(small_model.dim), 5, seed=0)
        frame = trace_to_frame(trace, small_model)
        assert list(frame.columns) == [
            "k",
            "x_1_1",
            "x_1_2",
            "x_1_3",
            "x_2_1",
            "x_2_2",
            "x_2_3",
            "y_1",
            "y_2",
            "z",
        ]
        assert frame["y_1"].isna().tolist() == [False] * 5 + [True]

    def test_csv_is_stable(self, model):
        trace = simulate(model, np.zeros(model.dim), 30, seed=4)
        with TemporaryDirectory() as d:
            first = Path(d) / "first.csv"
            second = Path(d) / "second.csv"
            utils.save_csv(trace_to_frame(trace, model), first)
            frame = utils.read_csv(first)
            utils.save_csv(frame, second)
            assert first.read_bytes() == second.read_bytes()

            loaded = trace_from_frame(frame, model, seed=4)
        np.testing.assert_array_equal(loaded.x, trace.x)
        np.testing.assert_array_equal(loaded.y, trace.y)
        np.testing.assert_array_equal(loaded.z, trace.z)
        np.testing.assert_allclose(
            loaded.v, trace.v, atol=1e-12 * np.abs(trace.x).max()
        )

    def test_model_mismatch(self, model, small_model):
        trace = simulate(small_model, np.zeros(small_model.dim), 5, seed=0)
        with pytest.raises(ParameterError):
            trace_from_frame(trace_to_frame(trace, small_model), model, 0)
