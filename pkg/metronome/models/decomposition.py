"""Observable canonical decomposition of the ensemble model.

The clock differences ``xi_o = (I_n (x) Vbar) x`` are observable while the
per-level common mode is not. The transformation

``T = [I_n (x) Vbar^+, I_n (x) 1_m] [[I, 0], [Gamma, I]]``

maps the decomposed coordinates ``xi = (xi_o, xi_obar)`` back onto the
state. The free block ``Gamma`` (shape ``n x n (m - 1)``) chooses which
complement of the observable subspace the unobservable coordinates live in.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from metronome.errors import ParameterError
from metronome.models.ensemble import _frozen


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Transformation and subsystem matrices for a fixed ``Gamma``.

    Attributes
    ----------
    gamma : numpy.ndarray
        ``n x n (m - 1)``.
    T, T_inv : numpy.ndarray
        The transformation and its structural inverse, ``n m x n m``.
    F_oo : numpy.ndarray
        Observable transition ``A (x) I_{m-1}``.
    F_oo_bar : numpy.ndarray
        Coupling from observable to unobservable coordinates,
        ``-Gamma (A (x) I_{m-1}) + A Gamma``.
    F_bar : numpy.ndarray
        Unobservable transition ``A``.
    H_o : numpy.ndarray
        Observable measurement matrix ``C (x) I_{m-1}``.
    W_o : numpy.ndarray
        Observable process noise ``W_single (x) Vbar Vbar^T``.
    """

    gamma: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    F_oo: np.ndarray
    F_oo_bar: np.ndarray
    F_bar: np.ndarray
    H_o: np.ndarray
    W_o: np.ndarray

    @property
    def n_obs(self):
        return self.F_oo.shape[0]

    @cached_property
    def gain_lift(self):
        """``I_n (x) Vbar^+ + (I_n (x) 1_m) Gamma``, the left block of ``T``.
        Multiplying an observable gain by it gives the equivalent full-space
        gain of the structured filter."""

        return _frozen(self.T[:, : self.n_obs])

    def split(self, x):
        """Returns ``(xi_o, xi_obar) = T^{-1} x``."""

        xi = self.T_inv @ np.asarray(x, dtype=float)
        return xi[: self.n_obs], xi[self.n_obs :]

    def join(self, xi_o, xi_obar):
        """Returns ``x = T (xi_o; xi_obar)``."""

        return self.T @ np.concatenate([xi_o, xi_obar])


def build_decomposition(model, gamma=None):
    """Builds the decomposition of ``model`` for the given ``Gamma``.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    gamma : array_like, optional
        Of shape ``(n, n (m - 1))``. Defaults to zero.

    Returns
    -------
    Decomposition
    """

    n, m, n_obs = model.n, model.m, model.n_obs
    if gamma is None:
        gamma = np.zeros((n, n_obs))
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (n, n_obs):
        raise ParameterError(
            f"Gamma must have shape {(n, n_obs)}, got {gamma.shape}"
        )
    if not np.all(np.isfinite(gamma)):
        raise ParameterError("Gamma must have finite entries")

    pinv_block = model.diff_pinv_block
    ones_block = model.ones_block
    T = np.hstack([pinv_block + ones_block @ gamma, ones_block])
    T_inv = np.vstack(
        [
            model.diff_block,
            -gamma @ model.diff_block + ones_block.T / m,
        ]
    )

    A = model.A
    F_oo = np.kron(A, np.eye(m - 1))
    return Decomposition(
        gamma=_frozen(gamma),
        T=_frozen(T),
        T_inv=_frozen(T_inv),
        F_oo=_frozen(F_oo),
        F_oo_bar=_frozen(-gamma @ F_oo + A @ gamma),
        F_bar=_frozen(A),
        H_o=_frozen(np.kron(model.C, np.eye(m - 1))),
        W_o=_frozen(np.kron(model.W_single, model.VVt)),
    )
