from .ensemble import (  # noqa
    ModelParams,
    EnsembleModel,
    build_transition,
    process_noise_single,
    build_vbar,
    build_model,
    project_covariance,
)
from .decomposition import Decomposition, build_decomposition  # noqa
