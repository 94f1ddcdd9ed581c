"""Optimal transformation matrix.

The cost ``J`` is an exact convex quadratic in ``v = vec(Gamma)``
(column-major, see :func:`metronome.moments.gamma_to_vec`), so it is
recovered from a fixed set of evaluations and minimized in closed form.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from metronome import logger
from metronome.errors import NonQuadraticError, ParameterError


#: Probe step used when the unit step overflows.
FALLBACK_STEP = 1e-3


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """``J(v) = 1/2 v^T M v + b^T v + c``.

    Attributes
    ----------
    M : numpy.ndarray
        Symmetric Hessian, ``d x d``.
    b : numpy.ndarray
        Gradient at ``v = 0``.
    c : float
        ``J(0)``.
    shape : tuple
        Shape of ``Gamma``; ``v`` is its column-major vectorization.
    step : float
        Probe step the form was recovered with.
    probe_residual : float
        Largest relative mismatch between the form and direct evaluation at
        the random validation probes.
    n_evaluations : int
    """

    M: np.ndarray
    b: np.ndarray
    c: float
    shape: tuple
    step: float = 1.0
    probe_residual: float = 0.0
    n_evaluations: int = 0

    @property
    def d(self):
        return self.b.size

    def value(self, v):
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ self.M @ v + self.b @ v + self.c)

    def gradient(self, v):
        return self.M @ np.asarray(v, dtype=float) + self.b

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.M)[0])


def _evaluate_all(evaluate, points, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            values = list(executor.map(evaluate, points))
    else:
        values = [evaluate(p) for p in points]
    return np.array(values, dtype=float)


def _design_points(d, step):
    """Centre, the ``+/- step e_i`` axis points and the ``step (e_i + e_j)``
    pair points for ``i < j``, in that order."""

    eye = step * np.eye(d)
    points = [np.zeros(d)]
    points += [eye[i] for i in range(d)]
    points += [-eye[i] for i in range(d)]
    points += [eye[i] + eye[j] for i in range(d) for j in range(i + 1, d)]
    return points


def _assemble(values, d, step):
    c = values[0]
    plus = values[1 : d + 1]
    minus = values[d + 1 : 2 * d + 1]
    pairs = values[2 * d + 1 :]

    b = (plus - minus) / (2.0 * step)
    M = np.diag((plus + minus - 2.0 * c) / step**2)
    index = 0
    for i in range(d):
        for j in range(i + 1, d):
            M[i, j] = M[j, i] = (pairs[index] - plus[i] - plus[j] + c) / (
                step**2
            )
            index += 1
    return M, b, float(c)


def recover_quadratic(
    evaluate,
    d,
    shape=None,
    step=1.0,
    n_probes=10,
    probe_seed=0,
    threads=1,
    rtol=1e-6,
):
    """Recovers the quadratic form of ``evaluate`` from
    ``d (d - 1) / 2 + 2 d + 1`` evaluations and validates it at
    ``n_probes`` random points.

    Parameters
    ----------
    evaluate : callable
        Maps a ``d`` vector to a float. Must be safe to call from several
        threads when ``threads > 1``.
    d : int
    shape : tuple, optional
        Shape of the matrix ``v`` vectorizes. Defaults to ``(d,)``.
    step : float, optional
        Probe step. If any evaluation overflows the recovery is repeated
        with step ``1e-3``.
    n_probes : int, optional
    probe_seed : int, optional
    threads : int, optional
    rtol : float, optional
        Largest accepted relative probe residual.

    Returns
    -------
    QuadraticForm

    Raises
    ------
    metronome.errors.NonQuadraticError
        If the probe residual exceeds ``rtol``.
    """

    if d < 1:
        raise ParameterError(f"Dimension must be >= 1, got {d}")
    if not step > 0.0:
        raise ParameterError(f"step must be positive, got {step}")
    shape = (d,) if shape is None else tuple(shape)

    with np.errstate(over="ignore", invalid="ignore"):
        values = _evaluate_all(evaluate, _design_points(d, step), threads)
    if not np.all(np.isfinite(values)) and step != FALLBACK_STEP:
        logger.debug(
            f"Probe evaluation overflowed at step {step}, retrying with "
            f"step {FALLBACK_STEP}"
        )
        step = FALLBACK_STEP
        values = _evaluate_all(evaluate, _design_points(d, step), threads)
    if not np.all(np.isfinite(values)):
        raise NonQuadraticError("Cost evaluations are not finite")
    M, b, c = _assemble(values, d, step)

    rng = np.random.default_rng(probe_seed)
    probes = [step * rng.standard_normal(d) for _ in range(n_probes)]
    direct = _evaluate_all(evaluate, probes, threads)
    residual = 0.0
    for v, value in zip(probes, direct):
        fitted = 0.5 * v @ M @ v + b @ v + c
        denominator = max(abs(value), np.finfo(float).tiny)
        residual = max(residual, abs(fitted - value) / denominator)
    if residual > rtol:
        raise NonQuadraticError(
            f"Cost is not quadratic: probe residual {residual:.3e} exceeds "
            f"{rtol:.1e}"
        )

    form = QuadraticForm(
        M=M,
        b=b,
        c=c,
        shape=shape,
        step=step,
        probe_residual=float(residual),
        n_evaluations=len(values) + n_probes,
    )
    lowest = form.min_eigenvalue
    if lowest < -1e-8 * np.linalg.norm(M):
        logger.warning(
            f"Recovered Hessian is not positive semidefinite (smallest "
            f"eigenvalue {lowest:.3e})"
        )
    logger.debug(
        f"Recovered quadratic form (d={d}, {form.n_evaluations} "
        f"evaluations, probe residual {residual:.2e})"
    )
    return form


def solve_optimal(form, rcond=1e-10):
    """Minimum-norm minimizer ``v* = -M^+ b``.

    Eigenvalues of ``M`` below ``rcond * lambda_max`` are treated as null
    directions and get a zero component.

    Parameters
    ----------
    form : QuadraticForm
    rcond : float, optional

    Returns
    -------
    tuple
        ``Gamma*`` reshaped to ``form.shape`` and ``J(Gamma*)``.
    """

    eigenvalues, U = eigh(form.M)
    cutoff = rcond * max(eigenvalues[-1], 0.0)
    keep = eigenvalues > cutoff
    if not np.any(keep):
        v_star = np.zeros(form.d)
    else:
        U_kept = U[:, keep]
        v_star = -U_kept @ ((U_kept.T @ form.b) / eigenvalues[keep])
    logger.debug(
        f"Solved for the optimum on {int(keep.sum())} of {form.d} directions"
    )
    gamma = np.reshape(v_star, form.shape, order="F")
    return gamma, form.value(v_star)


def check_stationary_at_zero(form):
    """Norm of the gradient of ``J`` at ``Gamma = 0``."""

    return float(np.linalg.norm(form.b))


def stationarity_scale(form):
    return float(np.linalg.norm(form.M) + abs(form.c))


def gamma_to_json(gamma, **metadata):
    """JSON payload of a ``Gamma`` matrix, stored row-major with its
    shape."""

    gamma = np.asarray(gamma, dtype=float)
    d = {"shape": list(gamma.shape), "gamma": gamma.tolist()}
    d.update(metadata)
    return d


def gamma_from_json(d, model=None):
    """Inverse of :func:`gamma_to_json`. With a model the shape is checked
    against ``(n, n (m - 1))``."""

    try:
        gamma = np.array(d["gamma"], dtype=float)
        shape = tuple(d["shape"])
    except (KeyError, TypeError, ValueError) as err:
        raise ParameterError(f"Malformed Gamma payload: {err}") from err
    if gamma.shape != shape:
        raise ParameterError(
            f"Gamma payload has shape {gamma.shape}, declared {shape}"
        )
    if model is not None and shape != (model.n, model.n_obs):
        raise ParameterError(
            f"Gamma has shape {shape}, model needs "
            f"{(model.n, model.n_obs)}"
        )
    return gamma
