from argparse import ArgumentParser
from pathlib import Path
import sys
import warnings

from omegaconf import OmegaConf, open_dict
from rich.pretty import pprint

from metronome import utils, logger, __version__
from metronome.errors import (
    ConfigValidationError,
    MissingArtifactError,
    NumericalError,
    ParameterError,
)
from metronome.logger import (
    ALL_LEVELS,
    NO_DEBUG_LEVELS,
    configure_loggers,
    log_banner,
)
from metronome import scenario


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


WARNINGS_ATTR = [
    "category",
    "file",
    "filename",
    "line",
    "lineno",
    "message",
    "source",
]

SUBCOMMANDS = {
    "run": "Run a complete scenario",
    "simulate": "Simulate sample paths",
    "filter": "Run a filter on simulated paths",
    "optimize": "Find the optimal transformation matrix",
    "moments": "Compute the analytic moments of the atomic time",
    "adev": "Compute Allan deviations of filter runs",
    "compare": "Compare filter runs",
}


def _configure_loggers(config):
    """Configures the Metronome logging system.

    Parameters
    ----------
    config : omegaconf.dictconfig.DictConfig
    """

    if config.debug_mode:
        configure_loggers()
    else:
        configure_loggers(levels=NO_DEBUG_LEVELS)

    log_banner("NEW RUN")

    if config.debug_mode:
        logger.info(f"Metronome {__version__} running with debug mode on")
    else:
        logger.info(f"Metronome {__version__}")


def _log_warnings(warnings_caught, config):
    if not warnings_caught:
        return
    warnings_path = Path(config.outputs.dir) / "warnings.yaml"
    logger.warning(f"Warnings were caught and saved to {warnings_path}")
    all_warnings = [
        {attribute: str(getattr(w, attribute)) for attribute in WARNINGS_ATTR}
        for w in warnings_caught
    ]
    if config.debug_mode:
        logger.debug("Warnings below")
        pprint(all_warnings)
    Path(config.outputs.dir).mkdir(parents=True, exist_ok=True)
    utils.save_yaml(all_warnings, warnings_path)


def build_parser():
    parser = ArgumentParser(
        prog="mtn", description="Clock ensemble time scale toolkit"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument(
            "--config",
            default=None,
            help="YAML config file or name of a packaged experiment",
        )
        sub.add_argument("--out", default=None, help="Output directory")
        sub.add_argument("--seed-override", type=int, default=None)
        sub.add_argument("--threads", type=int, default=None)
        sub.add_argument("--debug", action="store_true")
        if name == "filter":
            sub.add_argument("--algo", choices=["ckf", "skf", "ideal"])
            sub.add_argument(
                "--gamma",
                default=None,
                help="zero, optimize or the path of a Gamma JSON file",
            )
            sub.add_argument("--phat0", choices=["projected", "scaled"])
        if name == "compare":
            sub.add_argument(
                "--runs",
                nargs="+",
                default=[],
                help="Filter labels or filter run directories",
            )
        sub.add_argument(
            "overrides", nargs="*", help="Config overrides as key=value"
        )
    return parser


def load_config(args):
    """Composes the config and applies the command line modifiers."""

    config = utils.compose_config(args.config, args.overrides)
    utils.apply_seed_override_(config, args.seed_override)
    utils.apply_threads_(config, args.threads)
    utils.apply_output_dir_(config, args.out)
    if args.command == "filter":
        utils.apply_filter_options_(
            config, algo=args.algo, gamma=args.gamma, phat0=args.phat0
        )
    if args.debug:
        with open_dict(config):
            config["debug_mode"] = True
    return utils.finalize_config(config)


def _execute(args, config):
    if args.command == "run":
        return scenario.run_scenario(config)
    sc = scenario.prepare(config)
    scenario.save_final_config(sc)
    if args.command == "simulate":
        return scenario.stage_simulate(sc)
    if args.command == "filter":
        return scenario.stage_filter(sc)
    if args.command == "optimize":
        return scenario.stage_optimize(sc)
    if args.command == "moments":
        return scenario.stage_moments(sc)
    if args.command == "adev":
        return scenario.stage_adev(sc)
    return scenario.stage_compare(sc, args.runs)


def main(argv=None):
    """Runs a subcommand and returns the process exit code: 0 on success,
    1 on validation or missing-artifact errors, 2 on numerical failures."""

    args = build_parser().parse_args(argv)
    configure_loggers(levels=ALL_LEVELS if args.debug else NO_DEBUG_LEVELS)

    with utils.Timer() as dt:
        try:
            config = load_config(args)
            _configure_loggers(config)
            if config.debug_mode:
                logger.debug("OmegaConf config:")
                pprint(OmegaConf.to_container(config))
            with warnings.catch_warnings(record=True) as warnings_caught:
                _execute(args, config)
            _log_warnings(warnings_caught, config)
            code = EXIT_OK
        except (
            ConfigValidationError,
            ParameterError,
            MissingArtifactError,
        ) as err:
            logger.error(f"{err.__class__.__name__}: {err}")
            code = EXIT_VALIDATION
        except NumericalError as err:
            logger.error(f"{err.__class__.__name__}: {err}")
            code = EXIT_NUMERICAL

    logger.info(f"PROGRAM END ({str(int(dt()))} s)")
    return code


def entrypoint():
    sys.exit(main())
