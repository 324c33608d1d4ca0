"""Teaching tabular Q-learning and SARSA learners by reward shaping.

Submodules: :mod:`mdp` (instances and navigation plans), :mod:`learner`,
:mod:`teacher` (levels 1-4 and NavTeach), :mod:`harness` (sessions and
trials), :mod:`analytic` (formulas and bounds), :mod:`oracle` (covering
walks and the reduction) and :mod:`cli`.
"""

from teachdim.analytic import BoundInputs, expected_visits_closed, tdim_bounds
from teachdim.harness import SessionResult, TrialStats, expected_visits_mc, run_session, run_trials
from teachdim.learner import Goal, LearnerSpec, Rule, apply_update, greedy_policy, sample_action, solve_reward
from teachdim.mdp import Mdp, NavPlan, build_nav_plan, diameter, make_peacock, make_peacock_tree, min_transition_prob
from teachdim.teacher import TeachingProblem, adversarial_q0, constant_target, make_teacher

__version__ = "0.1.0"
