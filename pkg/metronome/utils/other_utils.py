from contextlib import contextmanager
import json
from time import perf_counter
import yaml

from omegaconf import OmegaConf
import pandas as pd


#: 17 significant digits, enough to round-trip any double.
CSV_FLOAT_FORMAT = "%.16e"


def omegaconf_to_yaml(d, path):
    OmegaConf.save(config=d, f=path)


def omegaconf_from_yaml(path):
    return OmegaConf.load(path)


@contextmanager
def Timer():
    start = perf_counter()
    yield lambda: perf_counter() - start


def save_json(d, path):
    with open(path, "w") as outfile:
        json.dump(d, outfile, indent=4, sort_keys=True)


def read_json(path):
    with open(path, "r") as infile:
        dat = json.load(infile)
    return dat


def save_yaml(d, path):
    with open(path, "w") as outfile:
        yaml.safe_dump(d, outfile, sort_keys=True)


def read_yaml(path):
    with open(path, "r") as infile:
        return yaml.safe_load(infile)


def save_csv(frame, path):
    """Writes a table without index. Floats keep full precision and missing
    entries are empty fields, so reading back with :func:`read_csv` and
    writing again reproduces the file byte for byte."""

    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def read_csv(path):
    return pd.read_csv(path, float_precision="round_trip")
