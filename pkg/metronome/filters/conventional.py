"""The conventional Kalman filter (one-step predictor form) run on the full,
undetectable ensemble state."""

from dataclasses import dataclass

import numpy as np

from metronome import logger
from metronome.filters._common import (
    FilterRun,
    check_covariance,
    check_finite_state,
    check_measurements,
    riccati_step,
)
from metronome.errors import ParameterError


@dataclass(frozen=True, eq=False)
class CkfState:
    """Predicted state ``x_hat[k]`` and its error covariance ``P_k``."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0


def ckf_init(model, x_hat0, P0):
    x_hat0 = np.asarray(x_hat0, dtype=float)
    if x_hat0.shape != (model.dim,):
        raise ParameterError(
            f"x_hat0 must have shape ({model.dim},), got {x_hat0.shape}"
        )
    return CkfState(x_hat=x_hat0, P=check_covariance(P0, model.dim, "P0"))


def ckf_step(state, y, model):
    """Advances the conventional filter by one measurement.

    ``L_k = -F P_k H^T (H P_k H^T + R)^{-1}``,
    ``P_{k+1} = (F + L_k H) P_k F^T + W`` and
    ``x_hat[k+1] = F x_hat[k] - L_k (y[k] - H x_hat[k])``.

    Parameters
    ----------
    state : CkfState
    y : numpy.ndarray
        Measurement ``y[k]`` of length ``m - 1``.
    model : metronome.models.EnsembleModel

    Returns
    -------
    tuple
        The next :class:`CkfState` and the gain ``L_k``.
    """

    P_next, L = riccati_step(model.F, state.P, model.H, model.R, model.W)
    innovation = y - model.H @ state.x_hat
    x_next = model.F @ state.x_hat - L @ innovation
    check_finite_state(x_next, state.k + 1, "CKF")
    return CkfState(x_hat=x_next, P=P_next, k=state.k + 1), L


def run_ckf(model, y, x_hat0, P0, keep_covariances=False):
    """Runs the conventional filter over a measurement sequence.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    y : array_like
        Measurements of shape ``(K, m - 1)``.
    x_hat0 : array_like
    P0 : array_like
    keep_covariances : bool, optional

    Returns
    -------
    metronome.filters.FilterRun
    """

    y = check_measurements(y, model)
    K = y.shape[0]
    state = ckf_init(model, x_hat0, P0)

    x_hat = np.empty((K + 1, model.dim))
    gains = np.empty((K, model.dim, model.m - 1))
    covariances = (
        np.empty((K + 1, model.dim, model.dim)) if keep_covariances else None
    )
    x_hat[0] = state.x_hat
    if keep_covariances:
        covariances[0] = state.P
    for k in range(K):
        state, gains[k] = ckf_step(state, y[k], model)
        x_hat[k + 1] = state.x_hat
        if keep_covariances:
            covariances[k + 1] = state.P

    logger.debug(f"CKF ran {K} steps")
    return FilterRun(
        algo="ckf",
        x_hat=x_hat,
        gains=gains,
        final_covariance=state.P,
        covariances=covariances,
    )
