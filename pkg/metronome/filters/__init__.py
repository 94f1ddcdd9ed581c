from ._common import (  # noqa
    FilterRun,
    covariance_diagnostics,
    predictor_gain,
    riccati_step,
    solve_innovation,
    symmetrize,
)
from .conventional import CkfState, ckf_init, ckf_step, run_ckf  # noqa
from .structured import (  # noqa
    GainSchedule,
    SkfState,
    compute_gain_schedule,
    observable_riccati_step,
    run_skf,
    skf_init,
    skf_reconstruct,
    skf_step,
    structured_gain,
)
from .reduced import (  # noqa
    REGULARIZER_EXPONENTS,
    ideal_atomic_time,
    ideal_unobs_error_step,
    lemma_identity_residual,
    reduced_cov_step,
    regularizer_scale,
    run_ideal_unobs_error,
    select_regularizer_exponent,
)
