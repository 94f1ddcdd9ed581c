from ._common import noise_generators, path_seed, psd_sqrt  # noqa
from .simulate import (  # noqa
    SimTrace,
    simulate,
    trace_to_frame,
    trace_from_frame,
)
