"""Risk-sensitive values with exponential utility and particle value functions."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .envs import basin_boundary, build_cliffworld, build_two_state
from .exact import (
    UtilitySpec,
    certain_equivalent,
    expected_return_exact,
    q_value_exact,
    return_support_bounds,
    risk_value_exact,
    taylor_coefficients,
)
from .gradients import (
    EmaBaseline,
    exact_risk_policy_grad,
    finite_diff_grad,
    pvf_policy_grad,
    pvf_policy_grad_cv,
    reinforce_grad,
    vimco_grad,
    vimco_objective,
)
from .harness import RunMetrics, TrainConfig, last_state_distribution, sweep, train
from .mdp import (
    AliasedBernoulliPolicy,
    CapacityError,
    FiniteMdp,
    TabularPolicy,
    Trajectory,
    TrajectoryBatch,
    enumerate_trajectories,
    log_policy_grad,
    policy_probs,
    sample_batch,
    sample_trajectory,
)
from .pvf import ParticleSystem, PvfEstimate, beta_zero_limit_check, pvf_exact_small, pvf_value_mc, run_filter
