"""Shared pieces of the Kalman recursions: the factorization-based innovation
solve, the one-step-predictor Riccati update and covariance diagnostics."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, eigvalsh, solve

from metronome.errors import NumericalError, ParameterError


def symmetrize(P):
    return 0.5 * (P + P.T)


def solve_innovation(S, B):
    """Solves ``S X = B`` for the symmetric innovation covariance ``S``
    without forming its inverse.

    Raises
    ------
    metronome.errors.NumericalError
        If ``S`` is singular or non-finite. The message carries a condition
        number estimate.
    """

    if not np.all(np.isfinite(S)):
        raise NumericalError("Innovation covariance has non-finite entries")
    try:
        return solve(S, B, assume_a="sym")
    except LinAlgError as err:
        cond = np.linalg.cond(S)
        raise NumericalError(
            "Innovation covariance is singular (condition number estimate "
            f"{cond:.3e})"
        ) from err


def predictor_gain(F, P, H, R):
    """Gain of the one-step predictor, ``L = -F P H^T (H P H^T + R)^{-1}``.
    ``P`` must be symmetric."""

    S = H @ P @ H.T + R
    return -solve_innovation(S, H @ P @ F.T).T


def riccati_step(F, P, H, R, W):
    """One step of the predictor Riccati recursion,
    ``P' = (F + L H) P F^T + W``, resymmetrized.

    Returns
    -------
    tuple of numpy.ndarray
        The next covariance and the gain ``L`` used.
    """

    L = predictor_gain(F, P, H, R)
    P_next = symmetrize((F + L @ H) @ P @ F.T + W)
    return P_next, L


def check_covariance(P, dim, name="P"):
    """Validates a user supplied covariance and returns it symmetrized."""

    P = np.asarray(P, dtype=float)
    if P.shape != (dim, dim):
        raise ParameterError(
            f"{name} must have shape {(dim, dim)}, got {P.shape}"
        )
    if not np.all(np.isfinite(P)):
        raise ParameterError(f"{name} must be finite")
    scale = max(np.linalg.norm(P), np.finfo(float).tiny)
    if np.linalg.norm(P - P.T) > 1e-9 * scale:
        raise ParameterError(f"{name} must be symmetric")
    return symmetrize(P)


def check_finite_state(x, k, algo):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{algo} state became non-finite at step {k}")


def covariance_diagnostics(P, common_map=None):
    """Summary numbers for a covariance matrix.

    Parameters
    ----------
    P : numpy.ndarray
    common_map : numpy.ndarray, optional
        ``I_n (x) 1_m``. When given, the trace of the common-mode block
        ``(I_n (x) 1_m)^T P (I_n (x) 1_m)`` is reported too.

    Returns
    -------
    dict
    """

    d = {
        "trace": float(np.trace(P)),
        "norm": float(np.linalg.norm(P)),
        "min_eigenvalue": float(eigvalsh(symmetrize(P))[0]),
        "asymmetry": float(np.linalg.norm(P - P.T)),
    }
    if common_map is not None:
        d["common_mode_trace"] = float(
            np.trace(common_map.T @ P @ common_map)
        )
    return d


@dataclass(frozen=True, eq=False)
class FilterRun:
    """The record of a filter run over a measurement sequence.

    Attributes
    ----------
    algo : str
        ``"ckf"`` or ``"skf"``.
    x_hat : numpy.ndarray
        Predicted states, shape ``(K + 1, n m)``.
    gains : numpy.ndarray
        Gains ``L_k`` (full space for the conventional filter, observable
        space for the structured one), shape ``(K, dim, m - 1)``.
    final_covariance : numpy.ndarray
    covariances : numpy.ndarray, optional
        All covariances ``P_0 ... P_K`` when requested.
    xi_o_hat, xi_obar_hat : numpy.ndarray, optional
        Decomposed coordinates of the structured filter.
    """

    algo: str
    x_hat: np.ndarray
    gains: np.ndarray
    final_covariance: np.ndarray
    covariances: Optional[np.ndarray] = None
    xi_o_hat: Optional[np.ndarray] = None
    xi_obar_hat: Optional[np.ndarray] = None


def check_measurements(y, model):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != model.m - 1:
        raise ParameterError(
            f"Measurements must have shape (K, {model.m - 1}), got {y.shape}"
        )
    return y
