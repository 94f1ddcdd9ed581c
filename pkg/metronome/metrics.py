"""Atomic time, clock readings and the overlapping Allan deviation."""

from dataclasses import dataclass

import allantools
import numpy as np
import pandas as pd
from scipy.signal import detrend as _detrend

from metronome import logger
from metronome.errors import NumericalError, ParameterError


DETREND_OPTIONS = ("none", "mean", "linear")


@dataclass(frozen=True, eq=False)
class TaSeries:
    """Atomic time ``TA[k] = z[k] - z_hat[k]`` in seconds.

    Attributes
    ----------
    values : numpy.ndarray
    source : str
        Which filter produced the estimate, e.g. ``"ckf"`` or ``"skf"``.
    """

    values: np.ndarray
    source: str = ""

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.values**2)))


def atomic_time(trace, estimates, model, source=""):
    """``TA[k] = D (x[k] - x_hat[k])``.

    Parameters
    ----------
    trace : metronome.data.SimTrace
    estimates : array_like
        Predicted states of shape ``(K + 1, n m)``.
    model : metronome.models.EnsembleModel
    source : str, optional

    Returns
    -------
    TaSeries
    """

    estimates = np.asarray(estimates, dtype=float)
    if estimates.shape != trace.x.shape:
        raise ParameterError(
            f"Estimates have shape {estimates.shape}, trace states "
            f"{trace.x.shape}"
        )
    values = (trace.x - estimates) @ model.D[0]
    return TaSeries(values=values, source=source)


def clock_readings(trace, model, t0=0.0):
    """Ideal reading ``h0[k] = t0 + k tau`` and the member readings
    ``h^j[k] = h0[k] + x_1^j[k]``.

    Returns
    -------
    tuple of numpy.ndarray
        ``h0`` of shape ``(K + 1,)`` and the readings of shape
        ``(K + 1, m)``.
    """

    h0 = t0 + model.params.tau * np.arange(trace.x.shape[0])
    return h0, h0[:, None] + trace.x[:, : model.m]


def generated_reading(readings, z_hat):
    """Clock reading generated by the ensemble, the mean member reading
    minus the predicted ensemble time deviation. ``generated - h0`` is the
    atomic time."""

    readings = np.asarray(readings, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if readings.shape[0] != z_hat.shape[0]:
        raise ParameterError(
            f"{readings.shape[0]} readings but {z_hat.shape[0]} estimates"
        )
    return readings.mean(axis=1) - z_hat


@dataclass(frozen=True, eq=False)
class AdevCurve:
    """Overlapping Allan deviation at a set of averaging times.

    Attributes
    ----------
    taus : numpy.ndarray
        Averaging times in seconds, strictly increasing.
    sigmas : numpy.ndarray
        Deviations (dimensionless fractional frequency).
    n_samples : numpy.ndarray
        Number of second differences behind each point.
    """

    taus: np.ndarray
    sigmas: np.ndarray
    n_samples: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.taus) <= 0.0):
            raise ParameterError("Averaging times must be increasing")
        if np.any(self.sigmas < 0.0) or np.any(self.n_samples < 1):
            raise ParameterError("Invalid Allan deviation curve")

    def __len__(self):
        return self.taus.size


def octave_factors(n_points):
    """Averaging factors ``1, 2, 4, ...`` usable with ``n_points`` phase
    samples, i.e. leaving at least two second differences,
    ``n_points >= 2 f + 2``."""

    factors = []
    f = 1
    while n_points >= 2 * f + 2:
        factors.append(f)
        f *= 2
    return np.array(factors, dtype=int)


def _factors_from_taus(taus, tau0):
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    factors = np.rint(taus / tau0).astype(int)
    if np.any(factors < 1) or not np.allclose(
        factors * tau0, taus, rtol=1e-9, atol=0.0
    ):
        raise ParameterError(
            f"Averaging times must be positive multiples of tau0={tau0}"
        )
    return np.unique(factors)


def detrend_phase(phase, detrend="none"):
    """Removes the mean (``"mean"``) or the least-squares line
    (``"linear"``) from a phase series. The latter also removes the mean
    fractional frequency."""

    if detrend not in DETREND_OPTIONS:
        raise ParameterError(
            f"detrend must be one of {DETREND_OPTIONS}, got {detrend!r}"
        )
    if detrend == "none":
        return phase
    return _detrend(phase, type="constant" if detrend == "mean" else detrend)


def overlapping_adev(phase, tau0, taus=None, detrend="none"):
    """Overlapping Allan deviation of a phase (time deviation) series,

    ``sigma^2(f tau0) = sum_i (x[i + 2f] - 2 x[i + f] + x[i])^2
    / (2 (f tau0)^2 (N - 2f))``,

    computed with :func:`allantools.oadev`.

    Parameters
    ----------
    phase : array_like
        Phase samples in seconds.
    tau0 : float
        Sampling interval in seconds.
    taus : array_like, optional
        Averaging times in seconds, multiples of ``tau0``. Defaults to the
        octave grid. Averaging times leaving fewer than two second
        differences are dropped with a warning.
    detrend : {"none", "mean", "linear"}, optional

    Returns
    -------
    AdevCurve
    """

    phase = np.asarray(phase, dtype=float)
    if phase.ndim != 1:
        raise ParameterError(f"Phase must be 1-D, got shape {phase.shape}")
    if not tau0 > 0.0:
        raise ParameterError(f"tau0 must be positive, got {tau0}")
    phase = detrend_phase(phase, detrend)
    N = phase.size

    if taus is None:
        factors = octave_factors(N)
    else:
        factors = _factors_from_taus(taus, tau0)
        usable = N >= 2 * factors + 2
        if not usable.all():
            logger.warning(
                f"Series of {N} points too short for averaging times "
                f"{(factors[~usable] * tau0).tolist()}, omitted"
            )
        factors = factors[usable]

    taus = factors * float(tau0)
    if not factors.size:
        return AdevCurve(
            taus=taus, sigmas=np.empty(0), n_samples=np.empty(0, dtype=int)
        )
    _, sigmas, _, counts = allantools.oadev(
        phase, rate=1.0 / tau0, data_type="phase", taus=taus
    )
    if len(sigmas) != factors.size:
        raise NumericalError(
            f"Allan deviation returned {len(sigmas)} points for "
            f"{factors.size} averaging times"
        )
    return AdevCurve(
        taus=taus,
        sigmas=np.asarray(sigmas, dtype=float),
        n_samples=np.asarray(counts).astype(int),
    )


def adev_to_frame(curve):
    return pd.DataFrame(
        {
            "tau": curve.taus,
            "sigma": curve.sigmas,
            "n_samples": curve.n_samples,
        }
    )


def adev_from_frame(frame):
    return AdevCurve(
        taus=frame["tau"].to_numpy(dtype=float),
        sigmas=frame["sigma"].to_numpy(dtype=float),
        n_samples=frame["n_samples"].to_numpy(dtype=int),
    )
