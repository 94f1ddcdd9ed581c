"""Reduced-order recursions tied to the conventional filter.

Started from ``P_0 = p I``, the conventional covariance satisfies
``P_k (I_n (x) Vbar^+) = (I_n (x) Vbar^+) P_check_k`` where ``P_check``
follows a Riccati recursion of the ``n (m - 1)`` dimensional differences
with process noise ``Q (x) I_{m-1}`` and the regularized measurement
covariance ``rho (Vbar Vbar^T)^{-1}``. This module carries that recursion
and the open-loop unobservable error of an ideal filter.
"""

import numpy as np

from metronome import logger
from metronome.errors import ParameterError
from metronome.filters._common import riccati_step


#: Regularizer exponents tried by :func:`select_regularizer_exponent`.
REGULARIZER_EXPONENTS = (1, 2)


def regularizer_scale(model, exponent=2):
    """``rho = (r^2) ** (exponent / 2)``. The exponent 2 gives ``rho = r^2``,
    which is what the block structure of ``H P H^T + R`` requires."""

    if exponent not in REGULARIZER_EXPONENTS:
        raise ParameterError(
            f"Regularizer exponent must be one of {REGULARIZER_EXPONENTS}, "
            f"got {exponent}"
        )
    return model.params.r_sq ** (exponent / 2)


def reduced_matrices(model, exponent=2):
    """Returns ``(F_oo, H_o, R_check, W_check)`` of the reduced recursion.
    ``(Vbar Vbar^T)^{-1} = I - 1 1^T / m`` is used in closed form."""

    m = model.m
    eye = np.eye(m - 1)
    F_oo = np.kron(model.A, eye)
    H_o = np.kron(model.C, eye)
    vvt_inv = eye - np.ones((m - 1, m - 1)) / m
    R_check = regularizer_scale(model, exponent) * vvt_inv
    W_check = np.kron(model.W_single, eye)
    return F_oo, H_o, R_check, W_check


def reduced_cov_step(P_check, model, exponent=2):
    """One step of the reduced recursion,
    ``P_check' = (F_oo + G_check H_o) P_check F_oo^T + Q (x) I_{m-1}``.

    Parameters
    ----------
    P_check : numpy.ndarray
        Of shape ``(n (m - 1), n (m - 1))``.
    model : metronome.models.EnsembleModel
    exponent : int, optional

    Returns
    -------
    tuple of numpy.ndarray
        The next covariance and the gain ``G_check``.
    """

    P_check = np.asarray(P_check, dtype=float)
    if P_check.shape != (model.n_obs, model.n_obs):
        raise ParameterError(
            f"P_check must have shape {(model.n_obs, model.n_obs)}, "
            f"got {P_check.shape}"
        )
    F_oo, H_o, R_check, W_check = reduced_matrices(model, exponent)
    return riccati_step(F_oo, P_check, H_o, R_check, W_check)


def lemma_identity_residual(model, p, horizon, exponent=2):
    """Relative residual of
    ``P_k (I_n (x) Vbar^+) = (I_n (x) Vbar^+) P_check_k`` for
    ``k = 0 ... horizon``, with both recursions started from ``p I``.

    Returns
    -------
    numpy.ndarray
        Of shape ``(horizon + 1,)``.
    """

    F_oo, H_o, R_check, W_check = reduced_matrices(model, exponent)
    lift = model.diff_pinv_block
    P = p * np.eye(model.dim)
    P_check = p * np.eye(model.n_obs)

    residuals = np.empty(horizon + 1)
    for k in range(horizon + 1):
        rhs = lift @ P_check
        residuals[k] = np.linalg.norm(P @ lift - rhs) / np.linalg.norm(rhs)
        if k < horizon:
            P, _ = riccati_step(model.F, P, model.H, model.R, model.W)
            P_check, _ = riccati_step(F_oo, P_check, H_o, R_check, W_check)
    return residuals


def select_regularizer_exponent(
    model, p=1e-12, horizon=200, rtol=1e-8, exponents=REGULARIZER_EXPONENTS
):
    """Checks every candidate exponent against the full covariance
    recursion and returns the first one whose residual stays below
    ``rtol``. Candidates are tried in the order of ``exponents``.

    Returns
    -------
    tuple
        The selected exponent (``None`` if no candidate passes) and a dict
        of the maximum residual per exponent.
    """

    residuals = {
        e: float(lemma_identity_residual(model, p, horizon, e).max())
        for e in exponents
    }
    selected = next((e for e, r in residuals.items() if r <= rtol), None)
    if selected is None:
        logger.warning(
            f"No regularizer exponent reproduces the full covariance: "
            f"{residuals}"
        )
    else:
        logger.debug(
            f"Regularizer exponent {selected} selected, residuals "
            f"{residuals}"
        )
    return selected, residuals


def ideal_unobs_error_step(eps_obar, v, model):
    """``eps_obar' = A eps_obar + (I_n (x) 1_m^T) v``: the common-mode error
    of a filter that tracks the clock differences exactly."""

    return model.A @ eps_obar + model.ones_block.T @ v


def run_ideal_unobs_error(model, eps0, v):
    """Propagates the ideal unobservable error along the process noise draws
    ``v`` of shape ``(K, n m)``.

    Returns
    -------
    numpy.ndarray
        Of shape ``(K + 1, n)``.
    """

    eps0 = np.asarray(eps0, dtype=float)
    if eps0.shape != (model.n,):
        raise ParameterError(
            f"eps0 must have shape ({model.n},), got {eps0.shape}"
        )
    v = np.asarray(v, dtype=float)
    eps = np.empty((v.shape[0] + 1, model.n))
    eps[0] = eps0
    for k in range(v.shape[0]):
        eps[k + 1] = ideal_unobs_error_step(eps[k], v[k], model)
    return eps


def ideal_atomic_time(model, x0, x_hat0, v):
    """Atomic time of the ideal filter, ``TA[k] = eps_obar[k][0] / m``, with
    ``eps_obar[0] = (I_n (x) 1_m^T)(x0 - x_hat0)``."""

    eps0 = model.ones_block.T @ (np.asarray(x0) - np.asarray(x_hat0))
    return run_ideal_unobs_error(model, eps0, v)[:, 0] / model.m
