"""Controls making modifications to scenario configurations. Modifiers work
in place and come with a bold success output style."""

from omegaconf import open_dict

from metronome import logger


LOGGER_PREFIX = "<modifier>"


def apply_seed_override_(config, seed):
    """Replaces the base seed of the run. Does nothing when ``seed`` is
    None.

    Parameters
    ----------
    config : omegaconf.dictconfig.DictConfig
        The configuration file which will be modified in-place.
    seed : int or None
    """

    if seed is None:
        return
    with open_dict(config):
        config.run["seed"] = int(seed)
    logger.success(f"{LOGGER_PREFIX} Run seed overridden: {seed}")


def apply_threads_(config, threads):
    if threads is None:
        return
    with open_dict(config):
        config.run["threads"] = int(threads)
    logger.success(f"{LOGGER_PREFIX} Worker threads set to {threads}")


def apply_output_dir_(config, out):
    """Points every artifact of the run at the directory ``out``."""

    if out is None:
        return
    with open_dict(config):
        config.outputs["dir"] = str(out)
    logger.success(f"{LOGGER_PREFIX} Output directory set to {out}")


def apply_filter_options_(config, algo=None, gamma=None, phat0=None):
    """Applies the filter choices given on the command line. A ``gamma``
    value that is neither ``zero`` nor ``optimize`` is read as the path of
    a Gamma JSON file."""

    with open_dict(config):
        if algo is not None:
            config.filter["algo"] = algo
            logger.success(f"{LOGGER_PREFIX} Filter algorithm set to {algo}")
        if gamma is not None:
            if gamma in ("zero", "optimize", "file"):
                config.filter["gamma"] = gamma
            else:
                config.filter["gamma"] = "file"
                config.filter["gamma_file"] = str(gamma)
            logger.success(
                f"{LOGGER_PREFIX} Gamma source set to "
                f"{config.filter.gamma}"
            )
        if phat0 is not None:
            config.filter["phat0"] = phat0
            logger.success(f"{LOGGER_PREFIX} P_hat0 mode set to {phat0}")
