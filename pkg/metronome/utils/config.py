"""Composition and validation of scenario configurations.

Configs are composed from the packaged groups in ``metronome.configs`` with
Hydra's compose API, optionally merged with a user YAML file, and merged
onto :class:`metronome.utils.schema.ScenarioConfig`.
"""

from pathlib import Path

from hydra import compose, initialize_config_module
from hydra.errors import HydraException
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from metronome import logger
from metronome.errors import ConfigValidationError
from metronome.filters.reduced import REGULARIZER_EXPONENTS
from metronome.utils.schema import SCHEMA_VERSION, ScenarioConfig


CONFIG_MODULE = "metronome.configs"
ROOT_CONFIG = "scenario"

ALGOS = ("ckf", "skf", "ideal")
GAMMA_SOURCES = ("zero", "file", "optimize")
PHAT0_MODES = ("projected", "scaled")
STATE_KINDS = ("constant", "explicit", "uniform")


def packaged_experiments():
    """Names of the experiment configs shipped with the package."""

    directory = Path(__file__).parents[1] / "configs" / "experiment"
    return sorted(p.stem for p in directory.glob("*.yaml"))


def compose_config(config=None, overrides=()):
    """Composes the raw (unvalidated) scenario config.

    Parameters
    ----------
    config : str or os.PathLike, optional
        A YAML file merged on top of the defaults, or the name of a packaged
        experiment.
    overrides : sequence of str, optional
        Hydra ``key=value`` overrides.

    Returns
    -------
    omegaconf.DictConfig
    """

    overrides = list(overrides)
    user_file = None
    if config is not None:
        if str(config) in packaged_experiments():
            overrides.insert(0, f"+experiment={config}")
        elif Path(config).is_file():
            user_file = Path(config)
        else:
            raise ConfigValidationError(
                f"Config {config} is neither a file nor a packaged "
                f"experiment ({packaged_experiments()})",
                fields=["--config"],
            )

    try:
        with initialize_config_module(
            config_module=CONFIG_MODULE, version_base=None
        ):
            cfg = compose(config_name=ROOT_CONFIG, overrides=overrides)
    except HydraException as err:
        raise ConfigValidationError(f"Invalid override: {err}") from err

    if user_file is not None:
        try:
            cfg = OmegaConf.merge(cfg, OmegaConf.load(user_file))
        except OmegaConfBaseException as err:
            raise ConfigValidationError(
                f"Could not merge {user_file}: {err}"
            ) from err
        logger.debug(f"Merged user config {user_file}")
    return cfg


def apply_schema(cfg):
    """Merges ``cfg`` onto the structured schema and reports missing
    mandatory values by their dotted path."""

    try:
        cfg = OmegaConf.merge(OmegaConf.structured(ScenarioConfig), cfg)
    except OmegaConfBaseException as err:
        key = getattr(err, "full_key", None)
        raise ConfigValidationError(
            f"Config does not match the schema: {err.msg}",
            fields=[key] if key else None,
        ) from err
    missing = sorted(OmegaConf.missing_keys(cfg))
    if missing:
        raise ConfigValidationError(
            "Mandatory config values are missing", fields=missing
        )
    return cfg


def _check_state(errors, spec, name, dim):
    if spec.kind not in STATE_KINDS:
        errors.append((f"{name}.kind", f"must be one of {STATE_KINDS}"))
    elif spec.kind == "explicit":
        if spec.entries is None or len(spec.entries) != dim:
            errors.append((f"{name}.entries", f"needs {dim} entries"))
    elif spec.kind == "uniform":
        if spec.low is None or spec.high is None or not spec.low < spec.high:
            errors.append((f"{name}.low", "uniform draw needs low < high"))
        if spec.seed is None:
            errors.append((f"{name}.seed", "uniform draw needs a seed"))


def validate_config(cfg):
    """Semantic checks beyond the schema. All problems are collected and
    reported together.

    Raises
    ------
    metronome.errors.ConfigValidationError
    """

    errors = []
    if cfg.schema_version != SCHEMA_VERSION:
        errors.append(
            ("schema_version", f"unsupported, expected {SCHEMA_VERSION}")
        )

    n, m = cfg.model.n, cfg.model.m
    if n < 1:
        errors.append(("model.n", "must be >= 1"))
    if m < 2:
        errors.append(("model.m", "must be >= 2"))
    if len(cfg.model.q_sq) != n:
        errors.append(("model.q_sq", f"needs n={n} entries"))
    if not cfg.model.tau > 0.0:
        errors.append(("model.tau", "must be positive"))
    if cfg.model.r_sq < 0.0:
        errors.append(("model.r_sq", "must be non-negative"))

    dim = n * m
    _check_state(errors, cfg.init.x0, "init.x0", dim)
    _check_state(errors, cfg.init.x_hat0, "init.x_hat0", dim)
    if cfg.init.Q0_scale < 0.0:
        errors.append(("init.Q0_scale", "must be non-negative"))

    f = cfg.filter
    if f.algo not in ALGOS:
        errors.append(("filter.algo", f"must be one of {ALGOS}"))
    if f.gamma not in GAMMA_SOURCES:
        errors.append(("filter.gamma", f"must be one of {GAMMA_SOURCES}"))
    if f.gamma == "file" and (
        f.gamma_file is None or not Path(f.gamma_file).is_file()
    ):
        errors.append(("filter.gamma_file", "must name an existing file"))
    if f.phat0 not in PHAT0_MODES:
        errors.append(("filter.phat0", f"must be one of {PHAT0_MODES}"))
    for key in ("P0_scale", "P_hat0_scale"):
        if not f[key] > 0.0:
            errors.append((f"filter.{key}", "must be positive"))

    o = cfg.optimizer
    if o.delta1 < 0.0 or o.delta2 < 0.0:
        errors.append(("optimizer.delta1", "weights must be non-negative"))
    elif o.delta1 + o.delta2 == 0.0:
        errors.append(("optimizer.delta2", "weights cannot both be zero"))
    if o.horizon < 1:
        errors.append(("optimizer.horizon", "must be >= 1"))
    if not o.P_hat0_scale > 0.0:
        errors.append(("optimizer.P_hat0_scale", "must be positive"))
    if not o.step > 0.0:
        errors.append(("optimizer.step", "must be positive"))

    r = cfg.run
    if r.horizon < 1:
        errors.append(("run.horizon", "must be >= 1"))
    if r.paths < 1:
        errors.append(("run.paths", "must be >= 1"))
    if r.seed < 0:
        errors.append(("run.seed", "must be non-negative"))
    if r.threads < 1:
        errors.append(("run.threads", "must be >= 1"))
    exponents = list(r.lemma_exponents)
    if not exponents or not set(exponents) <= set(REGULARIZER_EXPONENTS):
        errors.append(
            ("run.lemma_exponents", f"must be among {REGULARIZER_EXPONENTS}")
        )

    out = cfg.outputs
    if not 0.0 < out.confidence_level < 1.0:
        errors.append(("outputs.confidence_level", "must be in (0, 1)"))
    if out.adev_detrend not in ("none", "mean", "linear"):
        errors.append(("outputs.adev_detrend", "must be none|mean|linear"))

    if any(not s > 0.0 for s in cfg.study.P_hat0_scales):
        errors.append(("study.P_hat0_scales", "must be positive"))
    if any(d < 0.0 for d in cfg.study.delta2_sweep):
        errors.append(("study.delta2_sweep", "must be non-negative"))
    if o.delta1 == 0.0 and any(d == 0.0 for d in cfg.study.delta2_sweep):
        errors.append(("study.delta2_sweep", "weights cannot both be zero"))

    if errors:
        details = "; ".join(f"{key}: {msg}" for key, msg in errors)
        raise ConfigValidationError(
            f"Invalid config ({details})", fields=[k for k, _ in errors]
        )


def load_config(config=None, overrides=()):
    """Composes, schema-checks and validates a scenario config.

    Parameters
    ----------
    config : str or os.PathLike, optional
    overrides : sequence of str, optional

    Returns
    -------
    omegaconf.DictConfig
    """

    cfg = apply_schema(compose_config(config, overrides))
    validate_config(cfg)
    return cfg


def finalize_config(cfg):
    """Re-validates a config after modifiers have been applied."""

    cfg = apply_schema(cfg)
    validate_config(cfg)
    return cfg
