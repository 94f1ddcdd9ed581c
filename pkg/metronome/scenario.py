"""Pipeline stages of a scenario and the full scenario runner.

Every stage takes a prepared :class:`Scenario`, writes its artifacts under
the output directory (see :mod:`metronome.analysis` for the layout) and
returns what it computed so that :func:`run_scenario` can chain the stages
in memory. The command line runs the same stages one at a time, chaining
on files.
"""

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from metronome import logger, utils
from metronome.analysis import (
    ADEV,
    COMPARE,
    FILTER,
    MANIFEST,
    MOMENTS,
    OPTIMIZER,
    SUMMARY,
    TRACES,
    FINAL_CONFIG,
    RunArtifacts,
    path_file,
)
from metronome.data import path_seed, simulate, trace_to_frame
from metronome.data.simulate import state_columns
from metronome.errors import (
    MissingArtifactError,
    NumericalError,
    ParameterError,
)
from metronome.filters import (
    covariance_diagnostics,
    ideal_atomic_time,
    run_ckf,
    run_skf,
    select_regularizer_exponent,
)
from metronome.metrics import adev_to_frame, atomic_time, overlapping_adev
from metronome.models import build_decomposition, project_covariance
from metronome.moments import (
    gain_schedule,
    gamma_to_vec,
    make_cost_evaluator,
    moments_to_frame,
    ta_moments,
)
from metronome.optimizer import (
    check_stationary_at_zero,
    gamma_from_json,
    gamma_to_json,
    recover_quadratic,
    solve_optimal,
    stationarity_scale,
)


@dataclass(frozen=True, eq=False)
class Scenario:
    """A validated config together with the objects built from it."""

    config: object
    model: object
    x0: np.ndarray
    x_hat0: np.ndarray
    init: object
    P0: np.ndarray
    P_hat0: np.ndarray
    out_dir: Path

    @property
    def threads(self):
        return self.config.run.threads

    @property
    def artifacts(self):
        return RunArtifacts(self.out_dir, verbose=False)


def prepare(config):
    """Builds the model, initial conditions and priors of a config and
    creates its output directory."""

    model = utils.instantiate_model(config)
    x0, x_hat0, init = utils.instantiate_initial_states(config, model)
    P0, P_hat0 = utils.instantiate_covariance(config, model)
    out_dir = Path(config.outputs.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return Scenario(
        config=config,
        model=model,
        x0=x0,
        x_hat0=x_hat0,
        init=init,
        P0=P0,
        P_hat0=P_hat0,
        out_dir=out_dir,
    )


def save_final_config(sc):
    path = sc.out_dir / FINAL_CONFIG
    utils.omegaconf_to_yaml(sc.config, path)
    logger.info(f"Final config saved to {path}")


@contextmanager
def _stage(name):
    """Logs a stage and prefixes numerical failures with its name."""

    logger.info(f">>>>>> {name} start")
    try:
        yield
    except NumericalError as err:
        raise type(err)(f"[{name}] {err}") from err
    logger.success(f"<<<<<< {name} success")


def _map(fn, items, threads):
    """Ordered map, optionally on a thread pool."""

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


# Simulation ------------------------------------------------------------------


def stage_simulate(sc, write=True):
    """Simulates ``run.paths`` sample paths. Path ``i`` uses the seed
    ``run.seed + i``.

    Returns
    -------
    list of metronome.data.SimTrace
    """

    cfg = sc.config
    seeds = [path_seed(cfg.run.seed, i) for i in range(cfg.run.paths)]
    with _stage("simulate"):
        traces = _map(
            lambda s: simulate(sc.model, sc.x0, cfg.run.horizon, s),
            seeds,
            sc.threads,
        )
    if write and cfg.outputs.traces:
        directory = sc.out_dir / TRACES
        directory.mkdir(parents=True, exist_ok=True)
        for i, trace in enumerate(traces):
            utils.save_csv(
                trace_to_frame(trace, sc.model), directory / path_file(i)
            )
        utils.save_json(
            {
                "horizon": cfg.run.horizon,
                "measurement_seed": None,
                "paths": cfg.run.paths,
                "seeds": seeds,
            },
            directory / MANIFEST,
        )
        logger.info(f"{len(traces)} traces saved to {directory}")
    return traces


# Filtering -------------------------------------------------------------------


def filter_label(algo, gamma="zero", phat0="projected", P_hat0_scale=None):
    """Directory name of a filter run, e.g. ``ckf`` or
    ``skf_zero_projected``."""

    if algo in ("ckf", "ideal"):
        return algo
    prior = "projected" if phat0 == "projected" else f"scaled{P_hat0_scale:g}"
    return f"skf_{gamma}_{prior}"


def resolve_gamma(sc, source, gamma=None):
    """Returns ``Gamma`` for the given source. ``optimize`` uses ``gamma``
    when given, otherwise the artifact of the optimize stage."""

    model = sc.model
    if source == "zero":
        return np.zeros((model.n, model.n_obs))
    if source == "file":
        path = Path(sc.config.filter.gamma_file)
        if not path.is_file():
            raise MissingArtifactError(f"Gamma file {path} not found")
        return gamma_from_json(utils.read_json(path), model)
    if gamma is not None:
        return np.asarray(gamma, dtype=float)
    return sc.artifacts.gamma


@dataclass(frozen=True, eq=False)
class FilterResult:
    """TA series and estimates of one filter configuration on every
    path."""

    label: str
    algo: str
    ta: list
    z_hat: list
    x_hat: list
    diagnostics: dict
    meta: dict


def _filter_frame(model, ta, z_hat, x_hat=None):
    frame = pd.DataFrame({"k": np.arange(ta.size)})
    if x_hat is not None:
        columns = ["xhat" + c[1:] for c in state_columns(model)]
        frame = pd.concat(
            [frame, pd.DataFrame(x_hat, columns=columns)], axis=1
        )
    frame["z_hat"] = z_hat
    frame["TA"] = ta
    return frame


def run_filter(
    sc,
    traces,
    algo,
    gamma=None,
    gamma_source="zero",
    phat0="projected",
    P_hat0_scale=None,
    write=True,
):
    """Runs one filter configuration on every trace.

    Parameters
    ----------
    sc : Scenario
    traces : list of metronome.data.SimTrace
    algo : {"ckf", "skf", "ideal"}
    gamma : numpy.ndarray, optional
        Only used by ``skf``; defaults to zero.
    gamma_source : str, optional
        Recorded in the label and the run summary.
    phat0 : {"projected", "scaled"}, optional
    P_hat0_scale : float, optional
        Observable prior scale for ``phat0="scaled"``.
    write : bool, optional

    Returns
    -------
    FilterResult
    """

    model = sc.model
    if phat0 == "scaled" and P_hat0_scale is None:
        P_hat0_scale = sc.config.filter.P_hat0_scale
    label = filter_label(algo, gamma_source, phat0, P_hat0_scale)
    diagnostics = {}

    if algo == "ckf":

        def one(trace):
            run = run_ckf(model, trace.y, sc.x_hat0, sc.P0)
            return run.x_hat, run.final_covariance

        diagnostics_map = model.ones_block
    elif algo == "skf":
        if gamma is None:
            gamma = np.zeros((model.n, model.n_obs))
        decomp = build_decomposition(model, gamma)
        if phat0 == "projected":
            P_hat0 = project_covariance(model, sc.P0)
        else:
            P_hat0 = P_hat0_scale * np.eye(model.n_obs)
        schedule = gain_schedule(model, P_hat0, traces[0].horizon)

        def one(trace):
            run = run_skf(
                model, decomp, trace.y, sc.x_hat0, schedule=schedule
            )
            return run.x_hat, run.final_covariance

        diagnostics_map = None
    elif algo == "ideal":

        def one(trace):
            return None, None

        diagnostics_map = None
    else:
        raise ParameterError(f"Unknown filter algorithm {algo}")

    with _stage(f"filter {label}"):
        outputs = _map(one, traces, sc.threads)
        ta, z_hat, x_hat = [], [], []
        for trace, (estimates, _) in zip(traces, outputs):
            if algo == "ideal":
                series = ideal_atomic_time(
                    model, sc.x0, sc.x_hat0, trace.v
                )
            else:
                series = atomic_time(trace, estimates, model, label).values
            ta.append(series)
            z_hat.append(trace.z - series)
            x_hat.append(estimates)
        final_covariance = outputs[0][1]
        if final_covariance is not None:
            diagnostics = covariance_diagnostics(
                final_covariance, diagnostics_map
            )

    meta = {
        "algo": algo,
        "gamma_source": gamma_source if algo == "skf" else None,
        "horizon": int(traces[0].horizon),
        "label": label,
        "paths": len(traces),
        "phat0": phat0 if algo == "skf" else None,
        "P_hat0_scale": P_hat0_scale if algo == "skf" else None,
    }
    result = FilterResult(
        label=label,
        algo=algo,
        ta=ta,
        z_hat=z_hat,
        x_hat=x_hat,
        diagnostics=diagnostics,
        meta=meta,
    )
    if write and sc.config.outputs.filter_runs:
        write_filter_result(sc, result)
    return result


def write_filter_result(sc, result):
    directory = sc.out_dir / FILTER / result.label
    directory.mkdir(parents=True, exist_ok=True)
    for i, (ta, z_hat, x_hat) in enumerate(
        zip(result.ta, result.z_hat, result.x_hat)
    ):
        utils.save_csv(
            _filter_frame(sc.model, ta, z_hat, x_hat),
            directory / path_file(i),
        )
    utils.save_json(
        {
            **result.meta,
            "final_covariance": result.diagnostics,
            "ta_rms": [float(np.sqrt(np.mean(t**2))) for t in result.ta],
        },
        directory / SUMMARY,
    )
    logger.info(f"Filter run {result.label} saved to {directory}")


def stage_filter(sc, traces=None, gamma=None):
    """Runs the filter selected by the ``filter`` config node. Traces and
    the optimal Gamma are read from the output directory unless given."""

    f = sc.config.filter
    if traces is None:
        traces = sc.artifacts.traces
    if f.algo == "skf":
        gamma = resolve_gamma(sc, f.gamma, gamma)
    return run_filter(
        sc,
        traces,
        f.algo,
        gamma=gamma,
        gamma_source=f.gamma,
        phat0=f.phat0,
    )


# Optimization ----------------------------------------------------------------


def optimize_gamma(sc, delta1, delta2):
    """Recovers the cost as a quadratic form and minimizes it.

    Returns
    -------
    dict
        ``gamma`` and the scalar diagnostics of the solve.
    """

    cfg, model = sc.config, sc.model
    o = cfg.optimizer
    schedule = gain_schedule(
        model, utils.instantiate_optimizer_prior(cfg, model), o.horizon
    )
    evaluate = make_cost_evaluator(
        model, sc.init, schedule, delta1, delta2, o.horizon
    )
    form = recover_quadratic(
        evaluate,
        model.n * model.n_obs,
        shape=(model.n, model.n_obs),
        step=o.step,
        n_probes=o.n_probes,
        probe_seed=o.probe_seed,
        threads=sc.threads,
        rtol=o.probe_rtol,
    )
    gamma, J_fit = solve_optimal(form, rcond=o.rcond)
    J_star = evaluate(gamma_to_vec(gamma))
    logger.info(
        f"delta2={delta2:g}: J(0)={form.c:.6e}, J(Gamma*)={J_star:.6e}, "
        f"|Gamma*|={np.linalg.norm(gamma):.3e}"
    )
    return {
        "gamma": gamma,
        "form": form,
        "delta1": float(delta1),
        "delta2": float(delta2),
        "J_zero": float(form.c),
        "J_star": float(J_star),
        "J_star_fit": float(J_fit),
        "gamma_norm": float(np.linalg.norm(gamma)),
        "gradient_norm_at_zero": check_stationary_at_zero(form),
        "stationarity_scale": stationarity_scale(form),
        "hessian_min_eigenvalue": form.min_eigenvalue,
        "hessian_norm": float(np.linalg.norm(form.M)),
        "probe_residual": form.probe_residual,
        "step": form.step,
        "n_evaluations": form.n_evaluations,
    }


def _scalars(result):
    return {k: v for k, v in result.items() if k not in ("gamma", "form")}


def _write_optimization(sc, result, directory):
    directory.mkdir(parents=True, exist_ok=True)
    utils.save_json(
        gamma_to_json(
            result["gamma"],
            horizon=sc.config.optimizer.horizon,
            **_scalars(result),
        ),
        directory / "gamma.json",
    )
    form = result["form"]
    utils.save_json(
        {
            "M": form.M.tolist(),
            "b": form.b.tolist(),
            "c": form.c,
            "order": "column-major",
            "shape": list(form.shape),
        },
        directory / "form.json",
    )


def stage_optimize(sc, write=True):
    """Finds the optimal Gamma for the configured weights and for every
    ``study.delta2_sweep`` entry.

    Returns
    -------
    tuple
        The result for the configured weights and the sweep results.
    """

    cfg = sc.config
    o = cfg.optimizer
    with _stage("optimize"):
        result = optimize_gamma(sc, o.delta1, o.delta2)
        sweep = [
            optimize_gamma(sc, o.delta1, d2) for d2 in cfg.study.delta2_sweep
        ]
    if write:
        directory = sc.out_dir / OPTIMIZER
        _write_optimization(sc, result, directory)
        for r in sweep:
            sub = directory / f"delta2_{r['delta2']:g}"
            _write_optimization(sc, r, sub)
            moments = _runtime_moments(sc, r["gamma"])
            utils.save_csv(
                moments_to_frame(moments, cfg.outputs.confidence_level),
                sub / "moments.csv",
            )
        logger.info(f"Optimal Gamma saved to {directory}")
    return result, sweep


# Moments ---------------------------------------------------------------------


def _runtime_moments(sc, gamma):
    horizon = sc.config.run.horizon
    schedule = gain_schedule(sc.model, sc.P_hat0, horizon)
    decomp = build_decomposition(sc.model, gamma)
    return ta_moments(sc.model, decomp, sc.init, schedule, horizon)


def stage_moments(sc, gamma_star=None, load_optimal=True, write=True):
    """Analytic TA moments of the structured filter under the run-time
    observable prior, for ``Gamma = 0`` and, when available, the optimal
    Gamma. With ``load_optimal`` a missing ``gamma_star`` is read from the
    optimize stage artifacts.

    Returns
    -------
    dict
        Label to :class:`metronome.moments.TaMoments`.
    """

    cfg = sc.config
    gammas = {"gamma_zero": np.zeros((sc.model.n, sc.model.n_obs))}
    if gamma_star is None and load_optimal:
        try:
            gamma_star = sc.artifacts.gamma
        except MissingArtifactError:
            logger.info("No optimal Gamma found, moments for Gamma=0 only")
    if gamma_star is not None:
        gammas["gamma_opt"] = gamma_star

    with _stage("moments"):
        results = {
            label: _runtime_moments(sc, gamma)
            for label, gamma in gammas.items()
        }
    if write and cfg.outputs.moments:
        directory = sc.out_dir / MOMENTS
        directory.mkdir(parents=True, exist_ok=True)
        for label, moments in results.items():
            utils.save_csv(
                moments_to_frame(moments, cfg.outputs.confidence_level),
                directory / f"{label}.csv",
            )
    return results


# Allan deviation -------------------------------------------------------------


def _adev(sc, z_hat):
    out = sc.config.outputs
    taus = None if out.adev_taus is None else list(out.adev_taus)
    return overlapping_adev(
        z_hat, sc.model.params.tau, taus=taus, detrend=out.adev_detrend
    )


def stage_adev(sc, z_hats=None, write=True):
    """Overlapping Allan deviation of the predicted ensemble time deviation
    of every filter run and path.

    Parameters
    ----------
    sc : Scenario
    z_hats : dict, optional
        Label to list of per-path ``z_hat`` series. Read from the filter
        artifacts when omitted.

    Returns
    -------
    dict
        Label to list of :class:`metronome.metrics.AdevCurve`.
    """

    if z_hats is None:
        artifacts = sc.artifacts
        labels = artifacts.filter_labels()
        if not labels:
            raise MissingArtifactError(
                f"No filter runs in {sc.out_dir}; run the filter stage first"
            )
        z_hats = {
            label: [
                f["z_hat"].to_numpy() for f in artifacts.filter_frames(label)
            ]
            for label in labels
        }

    with _stage("adev"):
        curves = {
            label: [_adev(sc, z) for z in series]
            for label, series in z_hats.items()
        }
    if write and sc.config.outputs.adev:
        for label, per_path in curves.items():
            directory = sc.out_dir / ADEV / label
            directory.mkdir(parents=True, exist_ok=True)
            for i, curve in enumerate(per_path):
                utils.save_csv(adev_to_frame(curve), directory / path_file(i))
    return curves


# Comparison ------------------------------------------------------------------


def _resolve_run(sc, run):
    """A compare target is either a filter label of this output directory
    or the directory of a filter run."""

    p = Path(run)
    if (p / SUMMARY).is_file():
        return p.name, p
    directory = sc.out_dir / FILTER / run
    if not (directory / SUMMARY).is_file():
        raise MissingArtifactError(
            f"Filter run {run} not found; run the filter stage first"
        )
    return run, directory


def stage_compare(sc, runs, write=True, console=None):
    """Joins filter runs (path 0) into a TA table and an ADEV table and
    prints a summary.

    Returns
    -------
    tuple of pandas.DataFrame
        The TA table and the ADEV table.
    """

    if not runs:
        raise MissingArtifactError("Nothing to compare; pass --runs")
    ta_table, adev_table = None, None
    rows = []
    for run in runs:
        label, directory = _resolve_run(sc, run)
        frame = utils.read_csv(directory / path_file(0))
        curve = _adev(sc, frame["z_hat"].to_numpy())
        ta = frame[["k", "TA"]].rename(columns={"TA": f"TA_{label}"})
        adev = adev_to_frame(curve)[["tau", "sigma"]].rename(
            columns={"sigma": f"sigma_{label}"}
        )
        ta_table = ta if ta_table is None else ta_table.merge(ta, on="k")
        adev_table = (
            adev
            if adev_table is None
            else adev_table.merge(adev, on="tau", how="outer")
        )
        rows.append(
            (
                label,
                float(np.sqrt(np.mean(frame["TA"].to_numpy() ** 2))),
                curve.sigmas[0] if len(curve) else np.nan,
                curve.sigmas[-1] if len(curve) else np.nan,
            )
        )

    table = Table(title="Filter comparison (path 0)")
    for column in ("run", "RMS TA [s]", "ADEV first", "ADEV last"):
        table.add_column(column)
    for label, rms, first, last in rows:
        table.add_row(label, f"{rms:.4e}", f"{first:.4e}", f"{last:.4e}")
    (console or Console()).print(table)

    if write:
        directory = sc.out_dir / COMPARE
        directory.mkdir(parents=True, exist_ok=True)
        utils.save_csv(ta_table, directory / "ta.csv")
        utils.save_csv(adev_table, directory / "adev.csv")
    return ta_table, adev_table


# Diagnostics and the full scenario -------------------------------------------


def equivalence_diagnostics(sc, trace):
    """Largest conventional/structured state mismatch and gain
    orthogonality residual over the first ``run.equivalence_horizon``
    steps of ``trace``, for the configured prior and for the small prior
    ``run.lemma_p``."""

    cfg, model = sc.config, sc.model
    K = min(cfg.run.equivalence_horizon, trace.horizon)
    decomp = build_decomposition(model)
    d = {}
    priors = (("config_prior", cfg.filter.P0_scale), ("small_prior", None))
    for name, p in priors:
        p = cfg.run.lemma_p if p is None else p
        P0 = p * np.eye(model.dim)
        ckf = run_ckf(model, trace.y[:K], sc.x_hat0, P0)
        skf = run_skf(
            model,
            decomp,
            trace.y[:K],
            sc.x_hat0,
            P_hat0=project_covariance(model, P0),
        )
        state = np.linalg.norm(skf.x_hat - ckf.x_hat, axis=1) / (
            1.0 + np.linalg.norm(ckf.x_hat, axis=1)
        )
        common = np.linalg.norm(
            np.einsum("ij,kjl->kil", model.ones_block.T, ckf.gains),
            axis=(1, 2),
        )
        gains = np.linalg.norm(ckf.gains, axis=(1, 2))
        d[f"state_residual_{name}"] = float(state.max())
        d[f"gain_orthogonality_{name}"] = float(
            np.max(common / (1.0 + gains))
        )
    d["horizon"] = int(K)
    return d


def _summarize_filter(result):
    return {
        "final_covariance": result.diagnostics,
        "ta_rms_mean": float(
            np.mean([np.sqrt(np.mean(t**2)) for t in result.ta])
        ),
    }


def run_scenario(config):
    """Runs a complete scenario: simulation, the conventional, ideal and
    structured filters, the optimizer, the analytic moments, the Allan
    deviations, the configured studies and the consistency diagnostics.
    Writes a ``summary.json`` next to the other artifacts.

    Parameters
    ----------
    config : omegaconf.DictConfig
        A validated config (see :func:`metronome.utils.load_config`).

    Returns
    -------
    dict
        The summary.
    """

    sc = prepare(config)
    save_final_config(sc)
    cfg = sc.config
    summary = {
        "horizon": cfg.run.horizon,
        "name": cfg.name,
        "paths": cfg.run.paths,
        "schema_version": cfg.schema_version,
        "seed": cfg.run.seed,
    }

    traces = stage_simulate(sc)

    gamma_star = None
    if cfg.filter.gamma == "optimize" or cfg.study.delta2_sweep:
        result, sweep = stage_optimize(sc)
        summary["optimizer"] = _scalars(result)
        summary["delta2_sweep"] = [_scalars(r) for r in sweep]
        if cfg.filter.gamma == "optimize":
            gamma_star = result["gamma"]
    if cfg.filter.gamma == "file":
        gamma_star = resolve_gamma(sc, "file")

    runs = [
        run_filter(sc, traces, "ckf"),
        run_filter(sc, traces, "ideal"),
        run_filter(sc, traces, "skf", phat0=cfg.filter.phat0),
    ]
    if gamma_star is not None:
        runs.append(
            run_filter(
                sc,
                traces,
                "skf",
                gamma=gamma_star,
                gamma_source=cfg.filter.gamma,
                phat0=cfg.filter.phat0,
            )
        )
    for scale in cfg.study.P_hat0_scales:
        runs.append(
            run_filter(
                sc, traces, "skf", phat0="scaled", P_hat0_scale=float(scale)
            )
        )
    summary["filters"] = {r.label: _summarize_filter(r) for r in runs}

    moments = stage_moments(sc, gamma_star, load_optimal=False)
    summary["moments"] = {
        label: {
            "final_mean": float(m.mean[-1]),
            "final_var": float(m.var[-1]),
        }
        for label, m in moments.items()
    }
    stage_adev(sc, {r.label: r.z_hat for r in runs})

    with _stage("diagnostics"):
        exponent, residuals = select_regularizer_exponent(
            sc.model,
            p=cfg.run.lemma_p,
            horizon=cfg.run.lemma_horizon,
            exponents=list(cfg.run.lemma_exponents),
        )
        summary["lemma_regularizer_exponent"] = exponent
        summary["lemma_residuals"] = {str(e): r for e, r in residuals.items()}
        summary["equivalence"] = equivalence_diagnostics(sc, traces[0])

    utils.save_json(summary, sc.out_dir / SUMMARY)
    logger.info(f"Summary saved to {sc.out_dir / SUMMARY}")
    return summary
