import pytest

import numpy as np

from metronome.models import ModelParams, build_model
from metronome.moments import (
    gain_schedule,
    init_error_from_states,
    make_cost_evaluator,
)
from metronome.optimizer import recover_quadratic


THIRD_ORDER_Q_SQ = (2.9394e-10, 1.1785e-16, 4.5574e-35)
DELTA1 = 1.0
DELTA2 = 5.4117
COST_HORIZON = 1000


@pytest.fixture(scope="session")
def params():
    return ModelParams(n=3, m=5, tau=1.0, q_sq=THIRD_ORDER_Q_SQ, r_sq=1e-12)


@pytest.fixture(scope="session")
def model(params):
    """Five clocks, three levels."""

    return build_model(params)


@pytest.fixture(scope="session")
def small_model():
    """Three clocks, two levels, noise levels of comparable size."""

    return build_model(
        ModelParams(n=2, m=3, tau=1.0, q_sq=(1e-2, 1e-4), r_sq=1e-2)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(123)


@pytest.fixture(scope="session")
def case1_states(model):
    x0 = np.full(model.dim, 1e-28)
    return x0, x0.copy()


@pytest.fixture(scope="session")
def case2_states(model):
    x0 = np.random.default_rng(2023).uniform(-6e-8, 6e-8, model.dim)
    return x0, np.full(model.dim, 1e-28)


@pytest.fixture(scope="session")
def case1_init(case1_states):
    return init_error_from_states(*case1_states)


@pytest.fixture(scope="session")
def case2_init(case2_states):
    return init_error_from_states(*case2_states)


def _recover(model, init):
    schedule = gain_schedule(
        model, 1e-4 * np.eye(model.n_obs), COST_HORIZON
    )
    evaluate = make_cost_evaluator(
        model, init, schedule, DELTA1, DELTA2, COST_HORIZON
    )
    form = recover_quadratic(
        evaluate,
        model.n * model.n_obs,
        shape=(model.n, model.n_obs),
        threads=4,
    )
    return form, evaluate


@pytest.fixture(scope="module")
def case1_form(model, case1_init):
    """Quadratic form of the cost under the case 1 initial conditions,
    together with its direct evaluator."""

    return _recover(model, case1_init)


@pytest.fixture(scope="module")
def case2_form(model, case2_init):
    return _recover(model, case2_init)
