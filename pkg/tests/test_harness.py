import math

import numpy as np
import pytest

from reference import replay_q
from teachdim.analytic import expected_visits_recursion
from teachdim.errors import BudgetExceeded
from teachdim.harness import (
    RunningStats,
    TrialStats,
    expected_visits_mc,
    run_session,
    run_trials,
    visits_samples,
)
from teachdim.learner import LearnerSpec, Rule, policy_matches
from teachdim.mdp import Mdp, make_chain, make_peacock, make_peacock_tree, make_random
from teachdim.teacher import TeachingProblem, adversarial_q0, constant_target


def problem(mdp, eps=0.0, rule=Rule.STANDARD_Q, q0=None):
    target = constant_target(mdp)
    q0 = adversarial_q0(mdp, target) if q0 is None else q0
    return TeachingProblem(mdp, LearnerSpec(epsilon=eps, rule=rule), q0, target)


def single_state(A):
    return Mdp(1, A, {(0, a): ((0, 1.0),) for a in range(A)}, (1.0,), 1)


def same_result(r1, r2):
    return (
        r1.total_steps == r2.total_steps
        and r1.total_episodes == r2.total_episodes
        and np.array_equal(r1.visits, r2.visits)
        and np.array_equal(r1.final_q, r2.final_q)
        and r1.terminated == r2.terminated
    )


class TestSession:
    def test_level1_example(self):
        res = run_session(problem(make_chain(3)), 1)
        assert res.terminated and res.total_steps == 3

    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    def test_determinism(self, level):
        p = problem(make_random(8, 3, 0.3, 1), 0.3)
        assert same_result(run_session(p, level, seed=9), run_session(p, level, seed=9))

    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    def test_eps0_deterministic_mdp_has_no_variance(self, level):
        p = problem(make_chain(5, 3))
        lengths = {run_session(p, level, seed=s).total_steps for s in range(6)}
        assert len(lengths) == 1

    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    @pytest.mark.parametrize("rule", list(Rule))
    def test_accounting_and_soundness(self, level, rule):
        m = make_random(7, 3, 0.3, 2)
        p = problem(m, 0.2, rule)
        for seed in range(4):
            res = run_session(p, level, seed=seed)
            assert res.terminated
            assert res.visits.sum() == res.total_steps
            assert res.total_steps <= res.total_episodes * m.horizon
            assert policy_matches(res.final_q, p.target)

    @pytest.mark.parametrize("level", [2, 3, 4])
    @pytest.mark.parametrize("rule", list(Rule))
    def test_trace_replay_reproduces_q(self, level, rule):
        p = problem(make_peacock(6, 2, 3, 4, 0.25), 0.3, rule)
        res = run_session(p, level, seed=5, record=True)
        q = replay_q(res.trace, p.q0, p.spec.alpha, p.spec.gamma, rule is Rule.SARSA)
        assert np.allclose(q, res.final_q, rtol=0, atol=1e-9)

    def test_sarsa_first_step_of_episode_does_not_update(self):
        p = problem(make_peacock(6, 2, 3, 4, 0.25), 0.3, Rule.SARSA)
        snaps = []
        run_session(p, 3, seed=2, record=True, on_step=lambda q, rec, t: snaps.append((rec, q.copy())))
        prev_q = np.array(p.q0)
        for rec, q in snaps:
            if rec.episode_start:
                assert np.array_equal(q, prev_q)
            prev_q = q

    def test_budget(self):
        p = problem(make_peacock(8, 3, 3, 6, 0.2), 0.2)
        res = run_session(p, 3, seed=0, step_budget=5)
        assert not res.terminated and res.total_steps == 5
        with pytest.raises(BudgetExceeded) as err:
            run_session(p, 3, seed=0, step_budget=5, strict=True)
        assert err.value.result.total_steps == 5

    def test_nothing_to_teach(self):
        m = make_chain(3)
        q0 = np.tile([1.0, 0.0], (3, 1))
        res = run_session(TeachingProblem(m, LearnerSpec(), q0, constant_target(m)), 3)
        assert res.terminated and res.total_steps == 0

    def test_level4_starts_from_mu0(self):
        m = make_peacock_tree(D=3, d=2)
        res = run_session(problem(m, 0.1), 4, seed=1)
        assert set(res.initial_states) == {0}


class TestTrials:
    def test_seeds_and_single_trial(self):
        p = problem(make_chain(4, 3), 0.3)
        st = run_trials(p, 3, 1, base_seed=17)
        assert st.seeds == [17] and st.std_error == 0 and st.ci95_low == st.ci95_high == st.mean_steps
        assert st.mean_steps == run_session(p, 3, seed=17).total_steps

    def test_parallel_matches_serial(self):
        p = problem(make_peacock(8, 3, 3, 6, 0.2), 0.2)
        a = run_trials(p, 3, 40, base_seed=3)
        b = run_trials(p, 3, 40, base_seed=3, workers=2)
        assert a.steps == b.steps and a.mean_steps == b.mean_steps and a.std_error == b.std_error

    def test_failures_counted(self):
        p = problem(make_peacock(8, 3, 3, 6, 0.2), 0.2)
        st = run_trials(p, 3, 5, step_budget=3)
        assert st.failures == 5 and st.trial_count == 0 and math.isnan(st.mean_steps)

    def test_ci(self):
        st = TrialStats.from_steps([0, 1, 2, 3], [1, 2, 3, 10], [True] * 4)
        x = np.array([1, 2, 3, 10.0])
        assert st.mean_steps == pytest.approx(x.mean())
        assert st.std_error == pytest.approx(x.std(ddof=1) / 2)
        assert st.ci95_high - st.mean_steps == pytest.approx(1.96 * st.std_error)

    def test_running_stats_merge(self):
        x = np.random.default_rng(0).exponential(size=1000)
        whole = RunningStats()
        for v in x:
            whole.push(v)
        parts = []
        for chunk in np.array_split(x, 7):
            r = RunningStats()
            for v in chunk:
                r.push(v)
            parts.append(r)
        left = parts[0]
        for r in parts[1:]:
            left = left.merge(r)
        right = parts[-1]
        for r in reversed(parts[:-1]):
            right = r.merge(right)
        for m in (left, right):
            assert m.n == 1000
            assert m.mean == pytest.approx(x.mean(), rel=1e-12)
            assert m.variance == pytest.approx(x.var(ddof=1), rel=1e-10)

    def test_level2_single_state_worst_case(self):
        p = problem(single_state(4), 0.3)
        st = run_trials(p, 2, 20_000, base_seed=0)
        assert abs(st.mean_steps - 3) <= 3 * st.std_error + 1e-12

    def test_level2_single_blocker(self):
        m = single_state(3)
        q0 = np.array([[0.0, 1.0, -2.0]])
        p = TeachingProblem(m, LearnerSpec(0.5), q0, [0])
        st = run_trials(p, 2, 20_000, base_seed=0)
        assert abs(st.mean_steps - expected_visits_recursion(1, 3, 0.5)) <= 3 * st.std_error


class TestSubgame:
    def test_worst_case(self):
        x = visits_samples(4, 0.3, 3, trials=20_000, seed=1)
        assert abs(x.mean() - 3) <= 3 * x.std(ddof=1) / np.sqrt(len(x))

    def test_one_blocker(self):
        x = visits_samples(3, 0.5, 1, trials=20_000, seed=2)
        assert abs(x.mean() - 4 / 3) <= 3 * x.std(ddof=1) / np.sqrt(len(x))

    def test_sarsa(self):
        assert expected_visits_mc(4, 0.0, 3, Rule.SARSA, trials=200) <= 6

    def test_blocker_range(self):
        with pytest.raises(ValueError):
            expected_visits_mc(3, 0.1, 3)
