"""Teaching interaction loop, Monte Carlo trials and the single-state subgame.

One ``numpy`` generator drives a session. Draws happen in protocol order:
the learner's action, then either the level-3 teacher's random support pick
or the level-4 environment transition.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from teachdim.analytic import step_upper_bound
from teachdim.errors import BudgetExceeded, LevelViolation
from teachdim.learner import (
    Experience,
    Goal,
    LearnerSpec,
    Rule,
    apply_update,
    is_strict_top,
    sample_action,
    solve_reward,
)
from teachdim.mdp import Mdp
from teachdim.teacher import (
    DEFAULT_DELTA,
    Teacher,
    TeachingProblem,
    check_decision,
    make_teacher,
)

BUDGET_MULTIPLIER = 100
MAX_BUDGET = 10**9
TRACE_FIELDS = ("t", "episode", "s", "a", "r", "s_next", "branch", "subtask")


@dataclass
class StepRecord:
    t: int
    episode: int
    s: int
    a: int
    r: Optional[float]
    s_next: Optional[int]
    branch: str
    subtask: Optional[int]
    a_agent: int = -1
    goal: Optional[str] = None
    episode_start: bool = False

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in TRACE_FIELDS}


@dataclass
class SessionResult:
    total_steps: int
    total_episodes: int
    visits: np.ndarray
    terminated: bool
    final_q: np.ndarray
    trace: Optional[List[StepRecord]] = None
    initial_states: List[int] = field(default_factory=list)
    transition_counts: Optional[Dict[Tuple[int, int], Dict[int, int]]] = None


def default_step_budget(problem: TeachingProblem, level: int, multiplier: float = BUDGET_MULTIPLIER) -> int:
    bound = step_upper_bound(problem.mdp, problem.spec, level)
    if not math.isfinite(bound):
        return MAX_BUDGET
    return int(min(MAX_BUDGET, max(1, math.ceil(multiplier * bound))))


def run_session(
    problem: TeachingProblem,
    level: int,
    teacher: Optional[Teacher] = None,
    seed: int = 0,
    step_budget: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
    record: bool = False,
    count_transitions: bool = False,
    on_step: Optional[Callable[[np.ndarray, StepRecord, Teacher], None]] = None,
    strict: bool = False,
) -> SessionResult:
    """Run one teaching session until the greedy policy equals the target.

    Levels 1 and 2 place states freely, so their interaction is one
    continuous stream and the horizon only enters the episode count. Levels
    3 and 4 reset every ``horizon`` steps. SARSA learners apply each
    experience one step late and drop the experience left pending when an
    episode ends.

    Returns a partial result with ``terminated=False`` when the budget runs
    out, or raises :class:`BudgetExceeded` if ``strict`` is set.
    """
    if level not in (1, 2, 3, 4):
        raise ValueError(f"unknown teacher level {level}")
    mdp, spec = problem.mdp, problem.spec
    rng = np.random.default_rng(seed)
    q = np.array(problem.q0, dtype=float)
    target = [int(a) for a in problem.target]
    untaught = set(problem.needs_teaching(q))
    visits = np.zeros(mdp.num_states, dtype=np.int64)
    trace: Optional[List[StepRecord]] = [] if record else None
    counts: Optional[dict] = {} if count_transitions else None
    if not untaught:
        return SessionResult(0, 0, visits, True, q, trace, [], counts)

    if teacher is None:
        teacher = make_teacher(problem, level, delta)
    budget = step_budget if step_budget is not None else default_step_budget(problem, level)
    if budget <= 0:
        raise ValueError("step_budget must be positive")
    sarsa = spec.rule is Rule.SARSA
    H = mdp.horizon
    continuous = level in (1, 2)
    steps = 0
    episodes = 0
    starts: List[int] = []

    def refresh(row_state: int) -> bool:
        if is_strict_top(q[row_state].tolist(), target[row_state]):
            untaught.discard(row_state)
        else:
            untaught.add(row_state)
        return not untaught

    def finish(done: bool) -> SessionResult:
        n_ep = max(1, math.ceil(steps / H)) if continuous else episodes
        res = SessionResult(steps, n_ep, visits, done, q, trace, starts, counts)
        if not done and strict:
            raise BudgetExceeded(res)
        return res

    while True:
        episodes += 1
        s0 = teacher.initial_state(rng)
        if s0 is None:
            s0 = mdp.sample_initial(rng)
        elif level == 4:
            raise LevelViolation("level 4 teacher may not choose the initial state")
        elif level == 3 and mdp.initial_dist[s0] <= 0:
            raise LevelViolation(f"level 3 initial state {s0} has zero initial probability")
        s = s0
        starts.append(s)
        pending = None
        prev_rec = None
        horizon = itertools.count() if continuous else range(H)
        for h in horizon:
            a_agent = sample_action(q, s, spec, rng)
            chosen = teacher.override_action(s, a_agent)
            if chosen is not None and level >= 2:
                raise LevelViolation(f"level {level} teacher overrode an action")
            a = a_agent if chosen is None else chosen
            steps += 1
            visits[s] += 1

            if pending is not None:
                ps, pa, pgoal, _ = pending
                r_prev = solve_reward(q, ps, pa, s, pgoal, teacher.delta, spec, a_next=a)
                apply_update(q, Experience(ps, pa, r_prev, s, a), spec, inplace=True)
                if prev_rec is not None:
                    prev_rec.r = r_prev
                pending = None
                if refresh(ps):
                    rec = StepRecord(steps - 1, episodes, s, a, None, None, "absorbed", None, a_agent)
                    if trace is not None:
                        trace.append(rec)
                    if on_step is not None:
                        on_step(q, rec, teacher)
                    return finish(True)

            sampled = mdp.sample_next(s, a, rng) if level == 4 else None
            dec = teacher.decide(q, s, a, rng=rng, sampled_next=sampled)
            if chosen is not None and chosen != a_agent:
                dec.override_action = chosen
            check_decision(level, mdp, s, a_agent if level >= 2 else a, dec)
            s_next = sampled if level == 4 else dec.next_state

            rec = StepRecord(
                steps - 1, episodes, s, a, dec.reward, s_next, dec.branch, dec.subtask,
                a_agent, dec.goal.value, h == 0,
            )
            if counts is not None:
                row = counts.setdefault((s, a), {})
                row[s_next] = row.get(s_next, 0) + 1

            done = False
            if sarsa:
                pending = (s, a, dec.goal, s_next)
                prev_rec = rec
            else:
                apply_update(q, Experience(s, a, dec.reward, s_next), spec, inplace=True)
                done = refresh(s)
            if trace is not None:
                trace.append(rec)
            if on_step is not None:
                on_step(q, rec, teacher)
            if done:
                return finish(True)
            if steps >= budget:
                return finish(False)
            s = s_next
        # any SARSA experience still pending at the reset is discarded


class RunningStats:
    """Single-pass mean/variance accumulator with an associative merge."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        out = RunningStats()
        out.n = self.n + other.n
        if out.n == 0:
            return out
        d = other.mean - self.mean
        out.mean = self.mean + d * other.n / out.n
        out.m2 = self.m2 + other.m2 + d * d * self.n * other.n / out.n
        return out

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else 0.0


@dataclass
class TrialStats:
    trial_count: int
    failures: int
    mean_steps: float
    std_error: float
    ci95_low: float
    ci95_high: float
    seeds: List[int]
    steps: List[int] = field(default_factory=list, repr=False)

    @classmethod
    def from_steps(cls, seeds, steps, completed) -> "TrialStats":
        acc = RunningStats()
        for n, ok in zip(steps, completed):
            if ok:
                acc.push(float(n))
        mean = acc.mean if acc.n else float("nan")
        se = acc.std_error
        return cls(
            trial_count=acc.n,
            failures=sum(1 for ok in completed if not ok),
            mean_steps=mean,
            std_error=se,
            ci95_low=mean - 1.96 * se,
            ci95_high=mean + 1.96 * se,
            seeds=list(seeds),
            steps=list(steps),
        )


def _trial(args) -> Tuple[int, bool]:
    problem, level, seed, budget, delta = args
    res = run_session(problem, level, seed=seed, step_budget=budget, delta=delta)
    return res.total_steps, res.terminated


def run_trials(
    problem: TeachingProblem,
    level: int,
    n_trials: int,
    base_seed: int = 0,
    step_budget: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
) -> TrialStats:
    """Independent sessions with seeds ``base_seed + i``, aggregated in seed order."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if step_budget is None:
        step_budget = default_step_budget(problem, level)
    seeds = [base_seed + i for i in range(n_trials)]
    jobs = [(problem, level, sd, step_budget, delta) for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial, jobs, chunksize=max(1, n_trials // (8 * workers))))
    else:
        results = [_trial(j) for j in jobs]
    steps = [n for n, _ in results]
    completed = [ok for _, ok in results]
    return TrialStats.from_steps(seeds, steps, completed)


def subgame_row(A: int, n_blockers: int) -> Tuple[np.ndarray, int]:
    """One Q-row with ``n_blockers`` actions strictly above the target, no ties.

    The target is action 0; actions ``1..n`` sit above it and the rest below.
    """
    if not 1 <= n_blockers <= A - 1:
        raise ValueError(f"n_blockers must lie in [1, {A - 1}], got {n_blockers}")
    row = np.zeros(A)
    for k in range(1, A):
        row[k] = float(k) if k <= n_blockers else -float(k)
    return row, 0


def expected_visits_mc(
    A: int,
    epsilon: float,
    n_blockers: int,
    rule: Rule = Rule.STANDARD_Q,
    trials: int = 10_000,
    seed: int = 0,
    alpha: float = 0.5,
    gamma: float = 0.9,
    delta: float = DEFAULT_DELTA,
) -> float:
    """Mean number of visits a level-2 teacher needs to fix one state.

    The state loops back onto itself, so under SARSA every lesson is read
    one visit late.
    """
    return visits_samples(A, epsilon, n_blockers, rule, trials, seed, alpha, gamma, delta).mean()


def visits_samples(
    A: int,
    epsilon: float,
    n_blockers: int,
    rule: Rule = Rule.STANDARD_Q,
    trials: int = 10_000,
    seed: int = 0,
    alpha: float = 0.5,
    gamma: float = 0.9,
    delta: float = DEFAULT_DELTA,
) -> np.ndarray:
    """Per-trial visit counts behind :func:`expected_visits_mc`."""
    rule = Rule(rule)
    spec = LearnerSpec(epsilon=epsilon, alpha=alpha, gamma=gamma, rule=rule)
    row0, t = subgame_row(A, n_blockers)
    rng = np.random.default_rng(seed)
    out = np.empty(trials, dtype=np.int64)
    sarsa = rule is Rule.SARSA
    for i in range(trials):
        q = row0.reshape(1, A).copy()
        visits = 0
        pending = None
        while True:
            a = sample_action(q, 0, spec, rng)
            visits += 1
            if pending is not None:
                pa, pgoal = pending
                r = solve_reward(q, 0, pa, 0, pgoal, delta, spec, a_next=a)
                apply_update(q, Experience(0, pa, r, 0, a), spec, inplace=True)
                if is_strict_top(q[0].tolist(), t):
                    break
            goal = Goal.PROMOTE if a == t else Goal.DEMOTE
            if sarsa:
                pending = (a, goal)
            else:
                r = solve_reward(q, 0, a, 0, goal, delta, spec)
                apply_update(q, Experience(0, a, r, 0), spec, inplace=True)
                if is_strict_top(q[0].tolist(), t):
                    break
        out[i] = visits
    return out


def rollout(mdp: Mdp, q: np.ndarray, spec: LearnerSpec, rng: np.random.Generator) -> float:
    """One untaught episode under the MDP's own rewards; updates ``q`` in place.

    Returns the undiscounted episode return.
    """
    s = mdp.sample_initial(rng)
    total = 0.0
    a = sample_action(q, s, spec, rng)
    for _ in range(mdp.horizon):
        r = mdp.reward(s, a)
        s_next = mdp.sample_next(s, a, rng)
        a_next = sample_action(q, s_next, spec, rng)
        apply_update(q, Experience(s, a, r, s_next, a_next), spec, inplace=True)
        total += r
        s, a = s_next, a_next
    return total

