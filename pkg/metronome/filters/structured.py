"""The structured Kalman filter.

The recursion runs on the observable clock differences only, where the
model is detectable, and carries the unobservable common mode open loop.
Its observable covariance and gains do not depend on ``Gamma`` or on the
data, so they can be computed once per ``(model, P_hat0)`` and reused as a
:class:`GainSchedule`.
"""

from dataclasses import dataclass

import numpy as np

from metronome import logger
from metronome.errors import ParameterError
from metronome.filters._common import (
    FilterRun,
    check_covariance,
    check_finite_state,
    check_measurements,
    riccati_step,
)
from metronome.models import build_decomposition


def observable_riccati_step(P_o, decomp, model):
    """Riccati step of the observable subsystem. Returns the next covariance
    and the observable gain ``L_hat``."""

    return riccati_step(
        decomp.F_oo, P_o, decomp.H_o, model.R, decomp.W_o
    )


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Observable covariances ``P_hat_0 ... P_hat_T`` and gains
    ``L_hat_0 ... L_hat_{T-1}``."""

    gains: np.ndarray
    covariances: np.ndarray
    P_hat0: np.ndarray

    @property
    def horizon(self):
        return self.gains.shape[0]


def compute_gain_schedule(model, P_hat0, horizon):
    """Iterates the observable Riccati recursion for ``horizon`` steps.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    P_hat0 : array_like
        Initial observable covariance, ``n (m - 1)`` square.
    horizon : int

    Returns
    -------
    GainSchedule
    """

    if isinstance(horizon, bool) or int(horizon) != horizon or horizon < 0:
        raise ParameterError(f"horizon must be >= 0, got {horizon}")
    horizon = int(horizon)
    decomp = build_decomposition(model)
    P = check_covariance(P_hat0, model.n_obs, "P_hat0")

    gains = np.empty((horizon, model.n_obs, model.m - 1))
    covariances = np.empty((horizon + 1, model.n_obs, model.n_obs))
    covariances[0] = P
    for k in range(horizon):
        P, gains[k] = observable_riccati_step(P, decomp, model)
        covariances[k + 1] = P
    for array in (gains, covariances):
        array.setflags(write=False)
    return GainSchedule(
        gains=gains, covariances=covariances, P_hat0=covariances[0]
    )


def structured_gain(decomp, L_hat):
    """Full-space gain ``G = (I_n (x) Vbar^+ + (I_n (x) 1_m) Gamma) L_hat``
    equivalent to the structured update."""

    return decomp.gain_lift @ L_hat


@dataclass(frozen=True, eq=False)
class SkfState:
    """Decomposed estimate and observable covariance of the structured
    filter."""

    xi_o_hat: np.ndarray
    xi_obar_hat: np.ndarray
    P_o: np.ndarray
    decomp: object
    k: int = 0

    @property
    def x_hat(self):
        return skf_reconstruct(self)


def skf_init(model, decomp, x_hat0, P_hat0):
    """Splits the initial estimate into decomposed coordinates.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    decomp : metronome.models.Decomposition
    x_hat0 : array_like
        Initial full-space estimate.
    P_hat0 : array_like
        Initial observable covariance.

    Returns
    -------
    SkfState
    """

    x_hat0 = np.asarray(x_hat0, dtype=float)
    if x_hat0.shape != (model.dim,):
        raise ParameterError(
            f"x_hat0 must have shape ({model.dim},), got {x_hat0.shape}"
        )
    xi_o, xi_obar = decomp.split(x_hat0)
    return SkfState(
        xi_o_hat=xi_o,
        xi_obar_hat=xi_obar,
        P_o=check_covariance(P_hat0, model.n_obs, "P_hat0"),
        decomp=decomp,
    )


def _advance(state, y, L_hat, P_next):
    d = state.decomp
    xi_o = state.xi_o_hat
    xi_o_next = d.F_oo @ xi_o - L_hat @ (y - d.H_o @ xi_o)
    # the common mode is predicted from the pre-update differences
    xi_obar_next = d.F_oo_bar @ xi_o + d.F_bar @ state.xi_obar_hat
    check_finite_state(xi_o_next, state.k + 1, "SKF")
    check_finite_state(xi_obar_next, state.k + 1, "SKF")
    return SkfState(
        xi_o_hat=xi_o_next,
        xi_obar_hat=xi_obar_next,
        P_o=P_next,
        decomp=d,
        k=state.k + 1,
    )


def skf_step(state, y, model):
    """Advances the structured filter by one measurement.

    Returns
    -------
    tuple
        The next :class:`SkfState` and the observable gain ``L_hat_k``.
    """

    P_next, L_hat = observable_riccati_step(state.P_o, state.decomp, model)
    return _advance(state, y, L_hat, P_next), L_hat


def skf_reconstruct(state):
    """Full-space estimate ``x_hat = T xi_hat``."""

    return state.decomp.join(state.xi_o_hat, state.xi_obar_hat)


def run_skf(
    model,
    decomp,
    y,
    x_hat0,
    P_hat0=None,
    schedule=None,
    keep_covariances=False,
):
    """Runs the structured filter over a measurement sequence.

    Exactly one of ``P_hat0`` and ``schedule`` is given. With a schedule the
    stored gains are applied directly, which gives the same estimates as
    running the recursion live.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    decomp : metronome.models.Decomposition
    y : array_like
        Measurements of shape ``(K, m - 1)``.
    x_hat0 : array_like
    P_hat0 : array_like, optional
    schedule : GainSchedule, optional
        Must cover at least ``K`` steps.
    keep_covariances : bool, optional

    Returns
    -------
    metronome.filters.FilterRun
    """

    if (P_hat0 is None) == (schedule is None):
        raise ParameterError("Pass exactly one of P_hat0 and schedule")
    y = check_measurements(y, model)
    K = y.shape[0]
    if schedule is not None:
        if schedule.horizon < K:
            raise ParameterError(
                f"Gain schedule covers {schedule.horizon} steps, "
                f"{K} measurements given"
            )
        P_hat0 = schedule.P_hat0
    state = skf_init(model, decomp, x_hat0, P_hat0)

    n_obs = model.n_obs
    x_hat = np.empty((K + 1, model.dim))
    xi_o_hat = np.empty((K + 1, n_obs))
    xi_obar_hat = np.empty((K + 1, model.n))
    gains = np.empty((K, n_obs, model.m - 1))
    covariances = (
        np.empty((K + 1, n_obs, n_obs)) if keep_covariances else None
    )

    def record(k, s):
        x_hat[k] = skf_reconstruct(s)
        xi_o_hat[k] = s.xi_o_hat
        xi_obar_hat[k] = s.xi_obar_hat
        if keep_covariances:
            covariances[k] = s.P_o

    record(0, state)
    for k in range(K):
        if schedule is None:
            state, gains[k] = skf_step(state, y[k], model)
        else:
            gains[k] = schedule.gains[k]
            state = _advance(
                state, y[k], schedule.gains[k], schedule.covariances[k + 1]
            )
        record(k + 1, state)

    logger.debug(
        f"SKF ran {K} steps ("
        f"{'scheduled' if schedule is not None else 'live'} gains)"
    )
    return FilterRun(
        algo="skf",
        x_hat=x_hat,
        gains=gains,
        final_covariance=state.P_o,
        covariances=covariances,
        xi_o_hat=xi_o_hat,
        xi_obar_hat=xi_obar_hat,
    )
