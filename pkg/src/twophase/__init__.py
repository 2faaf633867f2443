"""Two-Phase Algorithm for logistic linearly parametrised Bernoulli bandits."""

from .core import (
    BanditInstance,
    Schedule,
    SphereInstance,
    iterated_log,
    logistic,
    logistic_derivative,
    logit,
    random_instance,
    schedule_g,
    schedule_g_inverse,
)
from .env import RegretTrace, RewardStream, pull, pull_sphere, record, trial_seed
from .policy import (
    EpochState,
    ProbeSet,
    baseline_random,
    baseline_ucb1,
    choose_probe_set,
    estimate_preference,
    run_trial,
    select_arm_finite,
    select_arm_sphere,
)
from .theory import (
    TheoryConstants,
    TheoryError,
    bad_epoch_probability_exact,
    bound_finite,
    bound_infinite,
    central_angle,
    compute_constants,
    compute_region_delta,
    kl_bernoulli,
    lemma_chain_check,
    phase2_regret_exact,
)

__version__ = "0.1.0"
