"""Tabular mean-field Q-learning lab.

A unified two-timescale Q-learning iteration solves either the game
(best-response) or the control (social-optimum) problem on the same
environment depending on which of the two learning rates decays faster; a
three-timescale extension handles the mixed control-game setting. The
package pairs the trainers with contraction fixed-point oracles, assumption
diagnostics, and accuracy-bound evaluators.
"""
from .core import (ActionSpace, DomainError, QTable, Rng, SimplexVector,
                   StateSpace, TabularMFEnvironment, ThreePopEnvironment,
                   dirac, l1_distance, make_rng, sup_distance)
from .envs import (TableEnvSpec, TorusSpec, table_env, torus3_env,
                   torus_as_table, torus_env)
from .operators import (ConstantEstimates, PolicyTable, bellman,
                        estimate_constants, p2, p3, p3_prime, t2, t3,
                        transition_operator)
from .oracles import (BoundReport, ConvergenceError, FixedPointSolution,
                      action_gap, error_bounds, phi_max,
                      solve_mfc_fixed_point, solve_mfcg_fixed_point,
                      solve_mfg_fixed_point, solve_q_star,
                      solve_sharp_equilibrium, stationary_distribution,
                      value_from_q)
from .policy import ActionDistribution, argmin_e, sample_action, softmin
from .schedules import (RateSchedule, ScheduleCheck, TimescaleConfig, rate_at,
                        validate_timescales)
from .trainers import (RunTrace, TrainerConfig, run_asynchronous,
                       run_idealized, run_synchronous_stochastic,
                       run_three_timescale, sample_p_check, sample_t_check)

__version__ = "0.1.0"
