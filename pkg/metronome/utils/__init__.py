from .config import (  # noqa
    apply_schema,
    compose_config,
    finalize_config,
    load_config,
    packaged_experiments,
    validate_config,
)
from .instantiators import (  # noqa
    instantiate_covariance,
    instantiate_initial_states,
    instantiate_model,
    instantiate_optimizer_prior,
    instantiate_params,
    instantiate_state,
)
from .modifiers import (  # noqa
    apply_filter_options_,
    apply_output_dir_,
    apply_seed_override_,
    apply_threads_,
)
from .other_utils import (  # noqa
    omegaconf_to_yaml,
    omegaconf_from_yaml,
    save_csv,
    read_csv,
    save_json,
    read_json,
    save_yaml,
    read_yaml,
    Timer,
)
