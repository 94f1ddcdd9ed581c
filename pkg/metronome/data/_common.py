"""Seeding layout and covariance factors shared by the data generators.

Substream layout
----------------
Every sample path ``i`` of a run with base seed ``s`` uses the seed
``s + i``. From that seed a ``numpy.random.SeedSequence`` spawns two
children: child 0 drives the process noise ``v`` and child 1 drives the
measurement noise ``w``. Passing a ``measurement_seed`` replaces child 1 by
the sequence with spawn key ``(1, measurement_seed)`` so the measurement
noise can be re-randomized while the process noise stays fixed.
"""

import numpy as np
from scipy.linalg import eigh

from metronome.errors import FactorizationError, ParameterError


PROCESS_STREAM = 0
MEASUREMENT_STREAM = 1


def path_seed(seed, path_index):
    """Seed of sample path ``path_index`` for base seed ``seed``."""

    return int(seed) + int(path_index)


def _check_seed(seed, name="seed"):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ParameterError(f"{name} must be an integer, got {seed!r}")
    if seed < 0:
        raise ParameterError(f"{name} must be non-negative, got {seed}")
    return int(seed)


def noise_generators(seed, measurement_seed=None):
    """Returns the process and measurement noise generators for a path.

    Parameters
    ----------
    seed : int
    measurement_seed : int, optional

    Returns
    -------
    tuple of numpy.random.Generator
    """

    seed = _check_seed(seed)
    process_ss, measurement_ss = np.random.SeedSequence(seed).spawn(2)
    if measurement_seed is not None:
        measurement_seed = _check_seed(measurement_seed, "measurement_seed")
        measurement_ss = np.random.SeedSequence(
            seed, spawn_key=(MEASUREMENT_STREAM, measurement_seed)
        )
    return np.random.default_rng(process_ss), np.random.default_rng(
        measurement_ss
    )


def psd_sqrt(S, symmetry_rtol=1e-10, negative_rtol=1e-12):
    """Square-root factor of a symmetric positive semidefinite matrix via
    its eigendecomposition, ``L = U diag(sqrt(lambda))``, so that
    ``L L^T = S``. Unlike a Cholesky factor this handles rank-deficient
    matrices such as noise covariances with vanishing levels.

    Parameters
    ----------
    S : array_like
        Square matrix, symmetric to relative tolerance ``symmetry_rtol``.
    symmetry_rtol : float, optional
    negative_rtol : float, optional
        Eigenvalues below ``-negative_rtol * ||S||`` reject the matrix;
        eigenvalues between that bound and zero are clipped to zero.

    Returns
    -------
    numpy.ndarray

    Raises
    ------
    metronome.errors.FactorizationError
        If ``S`` is indefinite beyond tolerance.
    """

    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ParameterError(f"Expected a square matrix, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise FactorizationError("Matrix to factorize has non-finite entries")

    scale = np.linalg.norm(S)
    if scale == 0.0:
        return np.zeros_like(S)
    asymmetry = np.linalg.norm(S - S.T)
    if asymmetry > symmetry_rtol * scale:
        raise ParameterError(
            f"Matrix is not symmetric: ||S - S^T|| / ||S|| = "
            f"{asymmetry / scale:.3e}"
        )

    eigenvalues, U = eigh(0.5 * (S + S.T))
    lowest = eigenvalues.min()
    if lowest < -negative_rtol * scale:
        raise FactorizationError(
            "Matrix is not positive semidefinite: most negative eigenvalue "
            f"is {lowest:.6e} (||S|| = {scale:.6e})"
        )
    return U * np.sqrt(np.clip(eigenvalues, 0.0, None))
