"""Exact propagation of the mean and variance of the atomic time.

The prediction error ``e = x - x_hat`` of the structured filter is tracked
in decomposed coordinates: the observable error ``eps_o = (I_n (x) Vbar) e``
and the ensemble-average error ``u = (I_n (x) 1_m^T) e / m``. With the
observable gains ``L_k`` they follow

``eps_o[k + 1] = (F_oo + L_k H_o) eps_o[k] + L_k v[k] + w_o[k]``
``u[k + 1] = A u[k] + Gamma L_k (H_o eps_o[k] + v[k]) + w_u[k]``

and ``TA[k] = C u[k]``. The gains come from a
:class:`~metronome.filters.GainSchedule` that does not depend on ``Gamma``,
so ``Gamma`` only enters through the injection ``Gamma L_k`` and the cost is
an exact quadratic function of ``Gamma``. Keeping the small observable
error apart from the common mode avoids the loss of precision of a
full-space propagation.
"""

from dataclasses import dataclass
from functools import lru_cache
import threading

import numpy as np
import pandas as pd
from scipy.linalg import block_diag, eigvalsh
from scipy.stats import norm

from metronome import logger
from metronome.errors import ParameterError
from metronome.filters import compute_gain_schedule, symmetrize
from metronome.models import build_decomposition, build_model


@dataclass(frozen=True, eq=False)
class InitError:
    """Distribution ``N(mu0, Q0)`` of the initial prediction error
    ``x[0] - x_hat[0]``."""

    mu0: np.ndarray
    Q0: np.ndarray

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        Q0 = np.asarray(self.Q0, dtype=float)
        if mu0.ndim != 1 or Q0.shape != (mu0.size, mu0.size):
            raise ParameterError(
                f"Incompatible shapes mu0 {mu0.shape} and Q0 {Q0.shape}"
            )
        if not (np.all(np.isfinite(mu0)) and np.all(np.isfinite(Q0))):
            raise ParameterError("Initial error must be finite")
        scale = np.linalg.norm(Q0)
        if scale > 0.0:
            if np.linalg.norm(Q0 - Q0.T) > 1e-9 * scale:
                raise ParameterError("Q0 must be symmetric")
            lowest = eigvalsh(symmetrize(Q0))[0]
            if lowest < -1e-12 * scale:
                raise ParameterError(
                    f"Q0 must be positive semidefinite, smallest eigenvalue "
                    f"is {lowest:.6e}"
                )
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Q0", symmetrize(Q0))

    @property
    def dim(self):
        return self.mu0.size


def structured_init_error(model, mu_hat0, Q_hat0, p):
    """``mu0 = mu_hat0 (x) 1_m`` and ``Q0 = Q_hat0 (x) p I_m``: initial
    errors shared equally by every clock, under which ``Gamma = 0`` is
    optimal.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    mu_hat0 : array_like
        Per-level mean of length ``n``.
    Q_hat0 : array_like
        Per-level covariance, ``n x n``.
    p : float

    Returns
    -------
    InitError
    """

    mu_hat0 = np.asarray(mu_hat0, dtype=float)
    Q_hat0 = np.asarray(Q_hat0, dtype=float)
    if mu_hat0.shape != (model.n,) or Q_hat0.shape != (model.n, model.n):
        raise ParameterError(
            f"mu_hat0 must have shape ({model.n},) and Q_hat0 "
            f"{(model.n, model.n)}"
        )
    if p < 0.0:
        raise ParameterError(f"p must be non-negative, got {p}")
    return InitError(
        mu0=np.kron(mu_hat0, np.ones(model.m)),
        Q0=np.kron(Q_hat0, p * np.eye(model.m)),
    )


def init_error_from_states(x0, x_hat0, Q0=None):
    """Initial error of a run started from known states, ``mu0 = x0 -
    x_hat0``. ``Q0`` defaults to zero."""

    mu0 = np.asarray(x0, dtype=float) - np.asarray(x_hat0, dtype=float)
    if Q0 is None:
        Q0 = np.zeros((mu0.size, mu0.size))
    return InitError(mu0=mu0, Q0=Q0)


#: Number of gain schedules kept in memory.
SCHEDULE_CACHE_SIZE = 32

_SCHEDULE_LOCK = threading.Lock()


@lru_cache(maxsize=SCHEDULE_CACHE_SIZE)
def _cached_schedule(params, shape, data, horizon):
    P_hat0 = np.frombuffer(data, dtype=float).reshape(shape).copy()
    logger.debug(f"Built gain schedule over {horizon} steps")
    return compute_gain_schedule(build_model(params), P_hat0, horizon)


def gain_schedule(model, P_hat0, horizon):
    """Cached :func:`metronome.filters.compute_gain_schedule`, keyed by
    ``(model parameters, P_hat0, horizon)``. The least recently used
    schedules are dropped past ``SCHEDULE_CACHE_SIZE`` entries. Safe to call
    from several threads."""

    if isinstance(horizon, bool) or int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    P_hat0 = np.ascontiguousarray(P_hat0, dtype=float)
    with _SCHEDULE_LOCK:
        return _cached_schedule(
            model.params, P_hat0.shape, P_hat0.tobytes(), int(horizon)
        )


def clear_schedule_cache():
    with _SCHEDULE_LOCK:
        _cached_schedule.cache_clear()


@dataclass(frozen=True, eq=False)
class TaMoments:
    """Mean and variance of ``TA[k]`` for ``k = 0 ... horizon``."""

    mean: np.ndarray
    var: np.ndarray
    horizon: int

    @property
    def std(self):
        return np.sqrt(self.var)


def _check_init(model, init):
    if init.dim != model.dim:
        raise ParameterError(
            f"Initial error has dimension {init.dim}, model has {model.dim}"
        )


def ta_moments(model, decomp, init, schedule, horizon):
    """Propagates the mean and covariance of the decomposed error
    ``(eps_o, u)`` and returns ``E[TA[k]]`` and ``V[TA[k]]``.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    decomp : metronome.models.Decomposition
        Carries ``Gamma``.
    init : InitError
    schedule : metronome.filters.GainSchedule
        Must cover at least ``horizon`` steps.
    horizon : int

    Returns
    -------
    TaMoments
    """

    if isinstance(horizon, bool) or int(horizon) != horizon or horizon < 0:
        raise ParameterError(f"horizon must be >= 0, got {horizon}")
    horizon = int(horizon)
    if schedule.horizon < horizon:
        raise ParameterError(
            f"Gain schedule covers {schedule.horizon} steps, horizon is "
            f"{horizon}"
        )
    _check_init(model, init)

    n_obs = model.n_obs
    to_decomposed = np.vstack(
        [model.diff_block, model.ones_block.T / model.m]
    )
    noise = block_diag(decomp.W_o, model.W_single / model.m)
    readout = np.concatenate([np.zeros(n_obs), model.C[0]])
    gamma = decomp.gamma

    # eps_o block and the injection row are refilled every step
    Psi = np.zeros((n_obs + model.n, n_obs + model.n))
    Psi[n_obs:, n_obs:] = model.A

    mean = np.empty(horizon + 1)
    var = np.empty(horizon + 1)
    m_k = to_decomposed @ init.mu0
    S = symmetrize(to_decomposed @ init.Q0 @ to_decomposed.T)
    for k in range(horizon + 1):
        mean[k] = readout @ m_k
        var[k] = readout @ S @ readout
        if k == horizon:
            break
        L = schedule.gains[k]
        B = np.vstack([L, gamma @ L])
        Psi[:n_obs, :n_obs] = decomp.F_oo + L @ decomp.H_o
        Psi[n_obs:, :n_obs] = B[n_obs:] @ decomp.H_o
        m_k = Psi @ m_k
        S = symmetrize(Psi @ S @ Psi.T + B @ model.R @ B.T + noise)

    return TaMoments(
        mean=mean, var=np.clip(var, 0.0, None), horizon=horizon
    )


def ideal_ta_moments(model, init, horizon):
    """Moments of the atomic time of a filter that tracks the clock
    differences exactly. The summed error ``eps = (I_n (x) 1_m^T) e``
    follows ``eps' = A eps + (I_n (x) 1_m^T) v`` and ``TA = C eps / m``."""

    _check_init(model, init)
    ones = model.ones_block
    noise = ones.T @ model.W @ ones
    c = model.C[0] / model.m
    mean = np.empty(horizon + 1)
    var = np.empty(horizon + 1)
    eps_mean = ones.T @ init.mu0
    eps_cov = ones.T @ init.Q0 @ ones
    for k in range(horizon + 1):
        mean[k] = c @ eps_mean
        var[k] = c @ eps_cov @ c
        eps_mean = model.A @ eps_mean
        eps_cov = symmetrize(model.A @ eps_cov @ model.A.T + noise)
    return TaMoments(
        mean=mean, var=np.clip(var, 0.0, None), horizon=int(horizon)
    )


def check_weights(delta1, delta2):
    if not (delta1 >= 0.0 and delta2 >= 0.0):
        raise ParameterError(
            f"Weights must be non-negative, got delta1={delta1}, "
            f"delta2={delta2}"
        )
    if delta1 + delta2 == 0.0:
        raise ParameterError("At least one of delta1, delta2 must be > 0")


def weighted_cost(moments, delta1, delta2):
    """``sum_k delta1 E[TA[k]]^2 + delta2 V[TA[k]]``."""

    return float(
        delta1 * np.sum(moments.mean**2) + delta2 * np.sum(moments.var)
    )


def cost_J(model, gamma, init, schedule, delta1, delta2, horizon):
    """Evaluates the cost of using ``gamma`` in the structured filter.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    gamma : array_like
        ``n x n (m - 1)``.
    init : InitError
    schedule : metronome.filters.GainSchedule
    delta1, delta2 : float
        Weights of the squared mean and of the variance.
    horizon : int

    Returns
    -------
    float
    """

    check_weights(delta1, delta2)
    decomp = build_decomposition(model, gamma)
    moments = ta_moments(model, decomp, init, schedule, horizon)
    return weighted_cost(moments, delta1, delta2)


def vec_to_gamma(v, model):
    """Inverse of :func:`gamma_to_vec`."""

    return np.reshape(v, (model.n, model.n_obs), order="F")


def gamma_to_vec(gamma):
    """Column-major vectorization of ``Gamma``: entry ``(i, j)`` goes to
    position ``i + n j``."""

    return np.ravel(np.asarray(gamma, dtype=float), order="F")


def make_cost_evaluator(model, init, schedule, delta1, delta2, horizon):
    """Returns ``J`` as a function of ``vec(Gamma)``."""

    check_weights(delta1, delta2)

    def evaluate(v):
        return cost_J(
            model,
            vec_to_gamma(v, model),
            init,
            schedule,
            delta1,
            delta2,
            horizon,
        )

    return evaluate


def confidence_interval(moments, level=0.98):
    """Two-sided normal band ``mean -/+ z sqrt(var)``.

    Parameters
    ----------
    moments : TaMoments
    level : float
        Coverage probability in ``(0, 1)``.

    Returns
    -------
    tuple of numpy.ndarray
        Lower and upper bounds.
    """

    if not 0.0 < level < 1.0:
        raise ParameterError(f"level must be in (0, 1), got {level}")
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(moments.var)
    return moments.mean - half, moments.mean + half


def band_label(level):
    return f"{100.0 * level:g}".replace(".", "_")


def moments_to_frame(moments, level=0.98):
    """Table with columns ``k, mean, var, lo<level>, hi<level>``."""

    lo, hi = confidence_interval(moments, level)
    label = band_label(level)
    return pd.DataFrame(
        {
            "k": np.arange(moments.horizon + 1),
            "mean": moments.mean,
            "var": moments.var,
            f"lo{label}": lo,
            f"hi{label}": hi,
        }
    )


def moments_from_frame(frame):
    return TaMoments(
        mean=frame["mean"].to_numpy(dtype=float),
        var=frame["var"].to_numpy(dtype=float),
        horizon=len(frame) - 1,
    )
