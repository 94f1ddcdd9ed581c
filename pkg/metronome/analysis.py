"""Core analysis module for Metronome. Locates and loads the artifacts a run
leaves in its output directory, so that pipeline stages can chain on files
and results can be inspected afterwards."""

from functools import cached_property, cache
from pathlib import Path

from rich.jupyter import print

from metronome import utils
from metronome.data import trace_from_frame
from metronome.errors import MissingArtifactError
from metronome.metrics import adev_from_frame
from metronome.moments import moments_from_frame
from metronome.optimizer import gamma_from_json


TRACES = "traces"
FILTER = "filter"
OPTIMIZER = "optimizer"
MOMENTS = "moments"
ADEV = "adev"
COMPARE = "compare"
FINAL_CONFIG = "final_config.yaml"
SUMMARY = "summary.json"
MANIFEST = "manifest.json"


def path_file(index):
    return f"path_{index:03d}.csv"


class RunArtifacts:
    """The artifacts of a single run directory, i.e. a directory holding a
    ``final_config.yaml``.

    Parameters
    ----------
    out_dir : os.PathLike
    verbose : bool, optional
    """

    def __init__(self, out_dir, verbose=False):
        self._out_dir = Path(out_dir)
        self._verbose = verbose

    @classmethod
    def from_root(klass, root, verbose=True):
        """Finds the single run below ``root`` via its final config."""

        paths = [str(xx) for xx in Path(root).rglob(FINAL_CONFIG)]
        if verbose:
            print(f"Found run paths {paths}")
        if len(paths) > 1:
            raise ValueError(
                f"Root can only correspond to one {FINAL_CONFIG} directory"
            )
        if len(paths) == 0:
            raise MissingArtifactError(f"No {FINAL_CONFIG} found in {root}")
        return klass(Path(paths[0]).parent.resolve(), verbose=verbose)

    @property
    def out_dir(self):
        return self._out_dir

    def path(self, *parts):
        return self._out_dir.joinpath(*parts)

    def require(self, *parts, stage=None):
        """Returns the path of an artifact, raising if it does not exist.

        Raises
        ------
        metronome.errors.MissingArtifactError
        """

        p = self.path(*parts)
        if not p.exists():
            hint = f"; run the {stage} stage first" if stage else ""
            raise MissingArtifactError(f"Missing artifact {p}{hint}")
        return p

    @cached_property
    def config(self):
        path = self.require(FINAL_CONFIG)
        config = utils.omegaconf_from_yaml(path)
        if self._verbose:
            print(f"Loaded {FINAL_CONFIG} from {path}")
        return config

    @cached_property
    def model(self):
        return utils.instantiate_model(self.config)

    @cached_property
    def summary(self):
        return utils.read_json(self.require(SUMMARY, stage="run"))

    @cached_property
    def trace_manifest(self):
        return utils.read_json(
            self.require(TRACES, MANIFEST, stage="simulate")
        )

    @cached_property
    def traces(self):
        """Sample paths read back from CSV. Their noise draws are recovered
        from the states and measurements."""

        manifest = self.trace_manifest
        return [
            trace_from_frame(
                utils.read_csv(
                    self.require(TRACES, path_file(i), stage="simulate")
                ),
                self.model,
                seed,
                manifest["measurement_seed"],
            )
            for i, seed in enumerate(manifest["seeds"])
        ]

    def filter_labels(self):
        directory = self.path(FILTER)
        if not directory.exists():
            return []
        return sorted(
            p.name for p in directory.iterdir() if (p / SUMMARY).exists()
        )

    @cache
    def filter_summary(self, label):
        return utils.read_json(self.require(FILTER, label, SUMMARY))

    @cache
    def filter_frames(self, label):
        """Per-path tables ``k, xhat_..., z_hat, TA`` of a filter run."""

        summary = self.filter_summary(label)
        return [
            utils.read_csv(self.require(FILTER, label, path_file(i)))
            for i in range(summary["paths"])
        ]

    @cached_property
    def gamma(self):
        """Optimal Gamma found by the optimize stage."""

        d = utils.read_json(
            self.require(OPTIMIZER, "gamma.json", stage="optimize")
        )
        return gamma_from_json(d, self.model)

    @cache
    def moments(self, label):
        return moments_from_frame(
            utils.read_csv(
                self.require(MOMENTS, f"{label}.csv", stage="moments")
            )
        )

    @cache
    def adev(self, label, index=0):
        return adev_from_frame(
            utils.read_csv(
                self.require(ADEV, label, path_file(index), stage="adev")
            )
        )
