"""Teachers of increasing constraint: full experience control (level 1), no
action override (level 2), support-constrained transitions (level 3) and
sampled transitions (level 4, reward shaping only).

A teacher is session-local state. The harness asks it, in protocol order,
for an optional action override and then for a :class:`TeacherDecision`
covering the reward goal and (levels 1-3) the next state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from teachdim.errors import InvariantViolation, LevelViolation
from teachdim.learner import Goal, LearnerSpec, Rule, is_strict_top, solve_reward
from teachdim.mdp import Mdp, NavPlan, build_nav_plan

DEFAULT_DELTA = 1.0


@dataclass(frozen=True, eq=False)
class TeachingProblem:
    mdp: Mdp
    spec: LearnerSpec
    q0: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        q0 = np.array(self.q0, dtype=float)
        target = np.array(self.target, dtype=int)
        S, A = self.mdp.num_states, self.mdp.num_actions
        if q0.shape != (S, A):
            raise InvariantViolation(f"q0 shape {q0.shape} does not match ({S}, {A})")
        if not np.all(np.isfinite(q0)):
            raise InvariantViolation("q0 must be finite")
        if target.shape != (S,) or np.any(target < 0) or np.any(target >= A):
            raise InvariantViolation("target must hold one in-range action per state")
        q0.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "target", target)

    def needs_teaching(self, q: Optional[np.ndarray] = None) -> List[int]:
        """States whose target action is not the strict argmax, ascending."""
        q = self.q0 if q is None else q
        rows = q.tolist()
        return [s for s in range(len(rows)) if not is_strict_top(rows[s], int(self.target[s]))]


@dataclass
class TeacherDecision:
    goal: Goal
    reward: Optional[float] = None
    override_action: Optional[int] = None
    next_state: Optional[int] = None
    branch: str = ""
    subtask: Optional[int] = None


def adversarial_q0(mdp: Mdp, target: Sequence[int]) -> np.ndarray:
    """Q-table with each target action strictly last and no ties elsewhere.

    The target entry is 0 and the remaining actions, in ascending index,
    take the values 2, 3, ..., so the greedy action is the highest-index
    non-target action.
    """
    S, A = mdp.num_states, mdp.num_actions
    q = np.zeros((S, A))
    for s in range(S):
        rank = 1
        for a in range(A):
            if a == target[s]:
                continue
            q[s, a] = 1 + rank
            rank += 1
    return q


def constant_target(mdp: Mdp, action: int = 0) -> np.ndarray:
    if not 0 <= action < mdp.num_actions:
        raise InvariantViolation(f"action {action} out of range")
    return np.full(mdp.num_states, action, dtype=int)


class Teacher:
    """Common plumbing; subclasses fill in :meth:`decide`."""

    level = 0

    def __init__(self, problem: TeachingProblem, delta: float = DEFAULT_DELTA):
        if delta <= 0:
            raise InvariantViolation(f"delta must be positive, got {delta}")
        self.problem = problem
        self.delta = float(delta)
        self.mdp = problem.mdp
        self.spec = problem.spec
        self.target = [int(a) for a in problem.target]
        self._immediate = problem.spec.rule is Rule.STANDARD_Q

    def initial_state(self, rng: np.random.Generator) -> Optional[int]:
        return None

    def override_action(self, s: int, a: int) -> Optional[int]:
        return None

    def decide(self, q, s, a, rng=None, sampled_next=None) -> TeacherDecision:
        raise NotImplementedError

    def _finish(self, dec: TeacherDecision, q: np.ndarray, s: int, a: int, s_next: Optional[int]):
        # SARSA rewards depend on the learner's next action, so they are
        # solved by the harness once that action is known.
        if self._immediate and s_next is not None:
            dec.reward = solve_reward(q, s, a, s_next, dec.goal, self.delta, self.spec)
        return dec

    def _random_support(self, s: int, a: int, rng: np.random.Generator) -> int:
        sup = self.mdp.support(s, a)
        return sup[int(rng.integers(len(sup)))]


class ScheduleTeacher(Teacher):
    """Levels 1 and 2: visit needs-teaching states in ascending index order."""

    def __init__(self, problem: TeachingProblem, delta: float = DEFAULT_DELTA):
        super().__init__(problem, delta)
        self.pending: List[int] = problem.needs_teaching()

    @property
    def scheduled(self) -> Optional[int]:
        return self.pending[0] if self.pending else None

    def initial_state(self, rng):
        return self.pending[0] if self.pending else 0

    def _advance(self, s: int, complete: bool) -> int:
        if complete and s in self.pending:
            idx = self.pending.index(s)
            self.pending.pop(idx)
        else:
            idx = self.pending.index(s) + 1 if s in self.pending else 0
        if not self.pending:
            return s
        if self._immediate:
            return s if (not complete and s in self.pending) else self.pending[0]
        # delayed updates: hop to another pending state so the lesson just
        # given is absorbed before this state is seen again
        return self.pending[idx % len(self.pending)]


class Level1Teacher(ScheduleTeacher):
    level = 1

    def override_action(self, s, a):
        return self.target[s]

    def decide(self, q, s, a, rng=None, sampled_next=None):
        if s not in self.pending:
            dec = TeacherDecision(Goal.MAINTAIN, next_state=self._advance(s, False), branch="idle")
        else:
            dec = TeacherDecision(Goal.PROMOTE, branch="teach", subtask=s)
            dec.next_state = self._advance(s, True)
        return self._finish(dec, q, s, a, dec.next_state)


class Level2Teacher(ScheduleTeacher):
    level = 2

    def decide(self, q, s, a, rng=None, sampled_next=None):
        if s not in self.pending:
            dec = TeacherDecision(Goal.MAINTAIN, branch="idle")
            dec.next_state = self._advance(s, False)
            return self._finish(dec, q, s, a, dec.next_state)
        t = self.target[s]
        if a == t:
            dec = TeacherDecision(Goal.PROMOTE, branch="promote", subtask=s)
            complete = True
        else:
            row = q[s].tolist()
            blockers = {b for b, v in enumerate(row) if v >= row[t]}
            complete = blockers == {a, t}
            dec = TeacherDecision(Goal.DEMOTE, branch="demote", subtask=s)
        dec.next_state = self._advance(s, complete)
        return self._finish(dec, q, s, a, dec.next_state)


class NavTeacher(Teacher):
    """Navigation-then-teach for levels 3 and 4.

    Subtasks follow the post-order of the BFS navigation tree. While a
    subtask is open, states on its ancestral path get their navigation
    action promoted, the subtask state gets its target action promoted, and
    every other state is left untouched.
    """

    def __init__(
        self,
        problem: TeachingProblem,
        level: int = 3,
        delta: float = DEFAULT_DELTA,
        plan: Optional[NavPlan] = None,
    ):
        if level not in (3, 4):
            raise ValueError(f"NavTeach runs at level 3 or 4, not {level}")
        super().__init__(problem, delta)
        self.level = level
        self.plan = plan if plan is not None else build_nav_plan(problem.mdp)
        self.order = list(self.plan.subtask_order)
        self.index = 0
        self.taught: set = set()
        self._next_on_path: Dict[int, int] = {}
        self._path_for: Optional[int] = None
        self._check_schedule()

    def _check_schedule(self):
        done = set()
        for s in self.order:
            interior = self.plan.path_states(s)[:-1]
            clash = done.intersection(interior)
            if clash:
                raise InvariantViolation(
                    f"state {min(clash)} is scheduled before an ancestor path through it"
                )
            done.add(s)

    def initial_state(self, rng):
        return self.plan.root if self.level == 3 else None

    def current_subtask(self, q: np.ndarray) -> Optional[int]:
        while self.index < len(self.order):
            s = self.order[self.index]
            if not is_strict_top(q[s].tolist(), self.target[s]):
                break
            self.taught.add(s)
            self.index += 1
        if self.index >= len(self.order):
            return None
        cur = self.order[self.index]
        if self._path_for != cur:
            states = self.plan.path_states(cur)
            self._next_on_path = dict(zip(states[:-1], states[1:]))
            self._path_for = cur
        return cur

    def decide(self, q, s, a, rng=None, sampled_next=None):
        if self.level == 4 and sampled_next is None:
            raise LevelViolation("level 4 needs the environment-sampled next state")
        cur = self.current_subtask(q)
        nxt = None
        if cur is not None and s == cur:
            goal = Goal.PROMOTE if a == self.target[s] else Goal.DEMOTE
            branch = "target"
        elif cur is not None and s in self._next_on_path:
            u = self._next_on_path[s]
            branch = "navigate"
            if self.mdp.supports(s, a, u):
                goal = Goal.PROMOTE
                nxt = u
            else:
                goal = Goal.DEMOTE
        else:
            goal = Goal.MAINTAIN
            branch = "maintain"
        dec = TeacherDecision(goal, branch=branch, subtask=cur)
        if self.level == 3:
            dec.next_state = nxt if nxt is not None else self._random_support(s, a, rng)
            return self._finish(dec, q, s, a, dec.next_state)
        return self._finish(dec, q, s, a, sampled_next)


def make_teacher(problem: TeachingProblem, level: int, delta: float = DEFAULT_DELTA) -> Teacher:
    if level == 1:
        return Level1Teacher(problem, delta)
    if level == 2:
        return Level2Teacher(problem, delta)
    if level in (3, 4):
        return NavTeacher(problem, level, delta)
    raise ValueError(f"unknown teacher level {level}")


def level1_decide(teacher: Level1Teacher, q, s, a) -> TeacherDecision:
    """Override the learner's action with the target and promote it."""
    chosen = teacher.override_action(s, a)
    dec = teacher.decide(q, s, chosen)
    dec.override_action = chosen
    return dec


def level2_decide(teacher: Level2Teacher, q, s, a) -> TeacherDecision:
    return teacher.decide(q, s, a)


def navteach_decide(teacher: NavTeacher, q, s, a, rng=None, sampled_next=None) -> TeacherDecision:
    return teacher.decide(q, s, a, rng=rng, sampled_next=sampled_next)


def check_decision(level: int, mdp: Mdp, s: int, a_agent: int, dec: TeacherDecision) -> None:
    """Raise :class:`LevelViolation` if ``dec`` exceeds the powers of ``level``."""
    if level >= 2 and dec.override_action is not None and dec.override_action != a_agent:
        raise LevelViolation(f"level {level} teacher overrode action {a_agent} at state {s}")
    if level == 4 and dec.next_state is not None:
        raise LevelViolation("level 4 teacher may not choose the next state")
    if level == 3:
        a = a_agent
        if dec.next_state is None or not mdp.supports(s, a, dec.next_state):
            raise LevelViolation(
                f"level 3 next state {dec.next_state} outside the support of ({s}, {a})"
            )
