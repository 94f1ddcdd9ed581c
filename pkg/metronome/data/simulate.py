"""Monte Carlo sample paths of the ensemble model."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from metronome import logger
from metronome.data._common import noise_generators, psd_sqrt
from metronome.errors import ParameterError


@dataclass(frozen=True, eq=False)
class SimTrace:
    """A sampled path of the ensemble.

    Attributes
    ----------
    x : numpy.ndarray
        True states, shape ``(horizon + 1, n m)``.
    y : numpy.ndarray
        Measured phase differences, shape ``(horizon, m - 1)``.
    z : numpy.ndarray
        Ensemble time deviation ``D x[k]``, shape ``(horizon + 1,)``.
    seed : int
    horizon : int
    v, w : numpy.ndarray
        The process and measurement noise draws. Traces read back from CSV
        carry the draws recovered from the states and measurements.
    measurement_seed : int, optional
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    seed: int
    horizon: int
    v: np.ndarray
    w: np.ndarray
    measurement_seed: Optional[int] = None


def simulate(model, x0, horizon, seed, measurement_seed=None):
    """Simulates one path of ``x[k + 1] = F x[k] + v[k]``,
    ``y[k] = H x[k] + w[k]``.

    Parameters
    ----------
    model : metronome.models.EnsembleModel
    x0 : array_like
        Initial true state of length ``n m``.
    horizon : int
        Number of steps ``K``; the trace holds ``K + 1`` states and ``K``
        measurements.
    seed : int
        Seed of this path (see :mod:`metronome.data._common`).
    measurement_seed : int, optional
        Re-randomizes the measurement noise only.

    Returns
    -------
    SimTrace
    """

    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ParameterError(
            f"x0 must have shape ({model.dim},), got {x0.shape}"
        )
    if not np.all(np.isfinite(x0)):
        raise ParameterError("x0 must be finite")
    if isinstance(horizon, bool) or int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    horizon = int(horizon)

    process_rng, measurement_rng = noise_generators(seed, measurement_seed)
    factor = np.kron(psd_sqrt(model.W_single), np.eye(model.m))
    v = process_rng.standard_normal((horizon, model.dim)) @ factor.T
    w = np.sqrt(model.params.r_sq) * measurement_rng.standard_normal(
        (horizon, model.m - 1)
    )

    x = np.empty((horizon + 1, model.dim))
    y = np.empty((horizon, model.m - 1))
    z = np.empty(horizon + 1)
    x[0] = x0
    for k in range(horizon):
        y[k] = model.H @ x[k] + w[k]
        z[k] = (model.D @ x[k])[0]
        x[k + 1] = model.F @ x[k] + v[k]
    z[horizon] = (model.D @ x[horizon])[0]

    logger.debug(
        f"Simulated {horizon} steps (seed={seed}, "
        f"measurement_seed={measurement_seed})"
    )
    return SimTrace(
        x=x,
        y=y,
        z=z,
        seed=int(seed),
        horizon=horizon,
        v=v,
        w=w,
        measurement_seed=measurement_seed,
    )


def state_columns(model):
    return [
        f"x_{level}_{clock}"
        for level in range(1, model.n + 1)
        for clock in range(1, model.m + 1)
    ]


def measurement_columns(model):
    return [f"y_{j}" for j in range(1, model.m)]


def trace_to_frame(trace, model):
    """Lays out a trace as a table with columns ``k``, the states
    ``x_<level>_<clock>``, the measurements ``y_<j>`` and ``z``. The
    measurement cells of the final row are empty."""

    K = trace.horizon
    y = np.vstack([trace.y, np.full((1, model.m - 1), np.nan)])
    frame = pd.DataFrame(trace.x, columns=state_columns(model))
    frame.insert(0, "k", np.arange(K + 1))
    for j, column in enumerate(measurement_columns(model)):
        frame[column] = y[:, j]
    frame["z"] = trace.z
    return frame


def trace_from_frame(frame, model, seed, measurement_seed=None):
    """Inverse of :func:`trace_to_frame`. The noise draws are recovered as
    ``v[k] = x[k + 1] - F x[k]`` and ``w[k] = y[k] - H x[k]``."""

    columns = state_columns(model) + measurement_columns(model)
    missing = [c for c in columns + ["k", "z"] if c not in frame.columns]
    if missing:
        raise ParameterError(
            f"Trace table does not match the model, missing {missing}"
        )
    x = frame[state_columns(model)].to_numpy(dtype=float)
    y = frame[measurement_columns(model)].to_numpy(dtype=float)[:-1]
    return SimTrace(
        x=x,
        y=y,
        z=frame["z"].to_numpy(dtype=float),
        seed=int(seed),
        horizon=x.shape[0] - 1,
        v=x[1:] - x[:-1] @ model.F.T,
        w=y - x[:-1] @ model.H.T,
        measurement_seed=measurement_seed,
    )
