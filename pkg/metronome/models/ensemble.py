"""System matrices for a homogeneous ensemble of ``m`` clocks, each following
an ``n``-th order integrated white-noise model sampled every ``tau`` seconds.

The state is ordered by derivative level: ``x = (x_1, ..., x_n)`` where
``x_i`` stacks the ``i``-th level (time deviation, frequency, drift, ...) of
all ``m`` clocks. With this ordering every ensemble matrix is a Kronecker
product of a single-clock block with an ``m``-dimensional clock block.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import factorial

import numpy as np
from scipy.linalg import toeplitz

from metronome.errors import ParameterError


def _is_integer(value):
    return isinstance(value, (int, np.integer)) and not isinstance(
        value, bool
    )


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the ensemble model.

    Parameters
    ----------
    n : int
        Model order, i.e. the number of derivative levels per clock.
    m : int
        Number of clocks in the ensemble, at least 2.
    tau : float
        Sampling interval in seconds.
    q_sq : sequence of float
        The ``n`` diffusion coefficients of the process noise, one per
        level.
    r_sq : float
        Variance of the phase-difference measurement noise in s^2.
    """

    n: int
    m: int
    tau: float
    q_sq: tuple
    r_sq: float

    def __post_init__(self):
        object.__setattr__(self, "q_sq", tuple(float(q) for q in self.q_sq))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "r_sq", float(self.r_sq))

        if not _is_integer(self.n) or self.n < 1:
            raise ParameterError(f"Model order n must be >= 1, got {self.n}")
        if not _is_integer(self.m) or self.m < 2:
            raise ParameterError(f"Clock count m must be >= 2, got {self.m}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        if not self.tau > 0.0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if len(self.q_sq) != self.n:
            raise ParameterError(
                f"q_sq must have length n={self.n}, got {len(self.q_sq)}"
            )
        if any(q < 0.0 for q in self.q_sq):
            raise ParameterError(f"q_sq must be non-negative: {self.q_sq}")
        if not self.r_sq >= 0.0:
            raise ParameterError(f"r_sq must be non-negative: {self.r_sq}")


def build_transition(n, tau):
    """Builds the single-clock transition matrix, the unit upper-triangular
    Toeplitz matrix with entry ``(i, j) = tau**(j - i) / (j - i)!``.

    Parameters
    ----------
    n : int
    tau : float
        ``tau = 0`` is accepted and gives the identity.

    Returns
    -------
    numpy.ndarray
        Of shape ``(n, n)``.
    """

    if not _is_integer(n) or n < 1:
        raise ParameterError(f"Model order n must be >= 1, got {n}")
    if tau < 0.0:
        raise ParameterError(f"tau must be non-negative, got {tau}")
    row = np.array([float(tau) ** k / factorial(k) for k in range(n)])
    return np.triu(toeplitz(row))


def process_noise_single(n, tau, q_sq):
    """Single-clock process noise covariance, the integral of
    ``A_t diag(q_sq) A_t^T`` over ``t`` in ``[0, tau]``, evaluated in closed
    form. Every entry is a polynomial in ``tau``:

    ``W(i, j) = sum_k q_k tau^(a + b + 1) / (a! b! (a + b + 1))``

    with ``a = k - i``, ``b = k - j`` and ``k >= max(i, j)``.

    Parameters
    ----------
    n : int
    tau : float
    q_sq : array_like
        Diffusion coefficients of length ``n``.

    Returns
    -------
    numpy.ndarray
        Symmetric positive semidefinite matrix of shape ``(n, n)``.
    """

    q_sq = np.asarray(q_sq, dtype=float)
    if q_sq.shape != (n,):
        raise ParameterError(
            f"q_sq must have shape ({n},), got {q_sq.shape}"
        )
    if np.any(q_sq < 0.0):
        raise ParameterError(f"q_sq must be non-negative: {q_sq.tolist()}")
    if tau < 0.0:
        raise ParameterError(f"tau must be non-negative, got {tau}")

    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            total = 0.0
            for k in range(j, n):
                a, b = k - i, k - j
                total += (
                    q_sq[k]
                    * tau ** (a + b + 1)
                    / (factorial(a) * factorial(b) * (a + b + 1))
                )
            W[i, j] = total
            W[j, i] = total
    return W


def build_vbar(m, exact=False):
    """Builds the clock-difference map ``Vbar = [I_{m-1}, -1]`` together with
    its Moore-Penrose inverse.

    Since ``Vbar Vbar^T = I + 1 1^T`` has the explicit inverse
    ``I - 1 1^T / m``, the pseudo-inverse is ``Vbar^T (I - 1 1^T / m)``,
    whose first ``m - 1`` rows are ``I - 1/m`` and whose last row is
    ``-1/m``. Its columns sum to zero.

    Parameters
    ----------
    m : int
        Number of clocks, at least 2.
    exact : bool, optional
        If True, returns object arrays of ``fractions.Fraction`` so that the
        defining identities can be checked in exact arithmetic.

    Returns
    -------
    tuple of numpy.ndarray
        ``Vbar`` of shape ``(m - 1, m)`` and its pseudo-inverse of shape
        ``(m, m - 1)``.
    """

    if not _is_integer(m) or m < 2:
        raise ParameterError(f"Clock count m must be >= 2, got {m}")

    if exact:
        one, zero, inv_m = Fraction(1), Fraction(0), Fraction(1, m)
        vbar = np.array(
            [
                [one if j == i else zero for j in range(m - 1)] + [-one]
                for i in range(m - 1)
            ],
            dtype=object,
        )
        pinv = np.array(
            [
                [(one if j == i else zero) - inv_m for j in range(m - 1)]
                for i in range(m - 1)
            ]
            + [[-inv_m] * (m - 1)],
            dtype=object,
        )
        return vbar, pinv

    vbar = np.hstack([np.eye(m - 1), -np.ones((m - 1, 1))])
    pinv = np.vstack([np.eye(m - 1), np.zeros((1, m - 1))]) - 1.0 / m
    return vbar, pinv


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """All matrices of the ensemble model

    ``x[k + 1] = F x[k] + v[k]``, ``y[k] = H x[k] + w[k]``,
    ``z[k] = D x[k]``

    with ``v ~ N(0, W)`` and ``w ~ N(0, R)``. Instances are immutable and
    safe to share between threads. Use :func:`build_model` to construct.
    """

    params: ModelParams
    A: np.ndarray
    F: np.ndarray
    C: np.ndarray
    Vbar: np.ndarray
    Vbar_pinv: np.ndarray
    H: np.ndarray
    D: np.ndarray
    W: np.ndarray
    W_single: np.ndarray
    R: np.ndarray

    @property
    def n(self):
        return self.params.n

    @property
    def m(self):
        return self.params.m

    @property
    def dim(self):
        """Dimension ``n m`` of the full state."""

        return self.params.n * self.params.m

    @property
    def n_obs(self):
        """Dimension ``n (m - 1)`` of the observable subspace."""

        return self.params.n * (self.params.m - 1)

    @cached_property
    def ones_block(self):
        """``I_n (x) 1_m`` of shape ``(n m, n)``, mapping a per-level common
        mode onto every clock."""

        return _frozen(np.kron(np.eye(self.n), np.ones((self.m, 1))))

    @cached_property
    def diff_block(self):
        """``I_n (x) Vbar`` of shape ``(n (m - 1), n m)``."""

        return _frozen(np.kron(np.eye(self.n), self.Vbar))

    @cached_property
    def diff_pinv_block(self):
        """``I_n (x) Vbar^+`` of shape ``(n m, n (m - 1))``."""

        return _frozen(np.kron(np.eye(self.n), self.Vbar_pinv))

    @cached_property
    def VVt(self):
        """``Vbar Vbar^T = I_{m-1} + 1 1^T``."""

        return _frozen(self.Vbar @ self.Vbar.T)


def build_model(params):
    """Builds every system matrix for the given parameters.

    Parameters
    ----------
    params : ModelParams

    Returns
    -------
    EnsembleModel
    """

    n, m = params.n, params.m
    A = build_transition(n, params.tau)
    W_single = process_noise_single(n, params.tau, params.q_sq)
    vbar, vbar_pinv = build_vbar(m)
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    eye_m = np.eye(m)
    return EnsembleModel(
        params=params,
        A=_frozen(A),
        F=_frozen(np.kron(A, eye_m)),
        C=_frozen(C),
        Vbar=_frozen(vbar),
        Vbar_pinv=_frozen(vbar_pinv),
        H=_frozen(np.kron(C, vbar)),
        D=_frozen(np.kron(C, np.ones((1, m))) / m),
        W=_frozen(np.kron(W_single, eye_m)),
        W_single=_frozen(W_single),
        R=_frozen(params.r_sq * np.eye(m - 1)),
    )


def project_covariance(model, P0):
    """Projects a full-space covariance onto the observable coordinates,
    ``(I_n (x) Vbar) P0 (I_n (x) Vbar)^T``. This is the initial observable
    covariance that makes the structured filter reproduce the conventional
    one started from ``P0``.

    Parameters
    ----------
    model : EnsembleModel
    P0 : numpy.ndarray
        Of shape ``(n m, n m)``.

    Returns
    -------
    numpy.ndarray
        Of shape ``(n (m - 1), n (m - 1))``.
    """

    P0 = np.asarray(P0, dtype=float)
    if P0.shape != (model.dim, model.dim):
        raise ParameterError(
            f"P0 must have shape {(model.dim, model.dim)}, got {P0.shape}"
        )
    return model.diff_block @ P0 @ model.diff_block.T
