"""Builds model parameters, initial conditions and covariances from a
validated scenario config."""

import hydra
import numpy as np

from metronome import logger
from metronome.errors import ConfigValidationError
from metronome.models import build_model, project_covariance
from metronome.moments import init_error_from_states


def instantiate_params(config):
    """Instantiates :class:`metronome.models.ModelParams` from the ``model``
    node through its ``_target_``."""

    params = hydra.utils.instantiate(config.model, _convert_="all")
    logger.debug(f"Model parameters instantiated {params}")
    return params


def instantiate_model(config):
    return build_model(instantiate_params(config))


def instantiate_state(spec, dim, name="state"):
    """Builds a state vector of length ``dim`` from a
    :class:`metronome.utils.schema.StateConfig` node."""

    if spec.kind == "constant":
        return np.full(dim, float(spec.value))
    if spec.kind == "explicit":
        values = np.array(list(spec.entries), dtype=float)
        if values.shape != (dim,):
            raise ConfigValidationError(
                f"{name} needs {dim} entries", fields=[f"{name}.entries"]
            )
        return values
    if spec.kind == "uniform":
        rng = np.random.default_rng(int(spec.seed))
        return rng.uniform(float(spec.low), float(spec.high), size=dim)
    raise ConfigValidationError(
        f"Unknown state kind {spec.kind}", fields=[f"{name}.kind"]
    )


def instantiate_initial_states(config, model):
    """Returns the true initial state, the initial estimate and the
    distribution of the initial error they imply."""

    x0 = instantiate_state(config.init.x0, model.dim, "init.x0")
    x_hat0 = instantiate_state(config.init.x_hat0, model.dim, "init.x_hat0")
    init = init_error_from_states(
        x0, x_hat0, config.init.Q0_scale * np.eye(model.dim)
    )
    logger.debug(
        f"Initial states instantiated (|x0 - x_hat0| = "
        f"{np.linalg.norm(init.mu0):.3e})"
    )
    return x0, x_hat0, init


def instantiate_covariance(config, model, P_hat0_scale=None):
    """Returns the full-space prior ``P0 = P0_scale I`` and the observable
    prior used at run time: its projection for ``phat0: projected``, or
    ``P_hat0_scale I`` for ``phat0: scaled``. Passing ``P_hat0_scale``
    forces the scaled form."""

    P0 = config.filter.P0_scale * np.eye(model.dim)
    if P_hat0_scale is None and config.filter.phat0 == "projected":
        P_hat0 = project_covariance(model, P0)
    else:
        scale = (
            config.filter.P_hat0_scale
            if P_hat0_scale is None
            else P_hat0_scale
        )
        P_hat0 = scale * np.eye(model.n_obs)
    return P0, P_hat0


def instantiate_optimizer_prior(config, model):
    """Observable prior the gain schedule of the cost is built from."""

    return config.optimizer.P_hat0_scale * np.eye(model.n_obs)
