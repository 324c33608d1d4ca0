"""Epsilon-greedy tabular learners and exact reward inversion.

A Q-table is a plain ``(S, A)`` float64 numpy array.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Tuple

import numpy as np

from teachdim.errors import InvariantViolation, MissingNextAction, ParseError


class Rule(str, enum.Enum):
    STANDARD_Q = "standard_q"
    SARSA = "sarsa"


class Goal(str, enum.Enum):
    PROMOTE = "promote"
    DEMOTE = "demote"
    MAINTAIN = "maintain"


@dataclass(frozen=True)
class LearnerSpec:
    epsilon: float = 0.0
    alpha: float = 0.5
    gamma: float = 0.9
    rule: Rule = Rule.STANDARD_Q

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvariantViolation(f"epsilon {self.epsilon} not in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise InvariantViolation(f"alpha {self.alpha} not in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise InvariantViolation(f"gamma {self.gamma} not in [0, 1)")
        object.__setattr__(self, "rule", Rule(self.rule))


class Experience(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    a_next: Optional[int] = None


def argmax_row(row) -> int:
    """Index of the largest entry, lowest index on ties."""
    best, best_v = 0, row[0]
    for i in range(1, len(row)):
        if row[i] > best_v:
            best, best_v = i, row[i]
    return best


def is_strict_top(row, a: int) -> bool:
    """True when ``row[a]`` is strictly larger than every other entry."""
    v = row[a]
    for i in range(len(row)):
        if i != a and row[i] >= v:
            return False
    return True


def sample_action(q: np.ndarray, s: int, spec: LearnerSpec, rng: np.random.Generator) -> int:
    """Greedy action with probability ``1 - epsilon``, else uniform over the rest."""
    row = q[s].tolist()
    best = argmax_row(row)
    if spec.epsilon > 0.0 and rng.random() < spec.epsilon:
        k = int(rng.integers(len(row) - 1))
        return k if k < best else k + 1
    return best


def _bootstrap(q: np.ndarray, s_next: int, a_next: Optional[int], spec: LearnerSpec) -> float:
    if spec.rule is Rule.SARSA:
        if a_next is None:
            raise MissingNextAction("SARSA update needs the next action")
        return float(q[s_next, a_next])
    return float(q[s_next].max())


def apply_update(q: np.ndarray, e: Experience, spec: LearnerSpec, inplace: bool = False) -> np.ndarray:
    """One learner update; only entry ``(e.s, e.a)`` changes."""
    target = e.r + spec.gamma * _bootstrap(q, e.s_next, e.a_next, spec)
    out = q if inplace else q.copy()
    out[e.s, e.a] = (1.0 - spec.alpha) * q[e.s, e.a] + spec.alpha * target
    return out


def goal_value(q: np.ndarray, s: int, a: int, goal: Goal, delta: float) -> float:
    """Post-update value of ``q[s, a]`` that realises ``goal``."""
    goal = Goal(goal)
    if goal is Goal.MAINTAIN:
        return float(q[s, a])
    others = [v for i, v in enumerate(q[s].tolist()) if i != a]
    if goal is Goal.PROMOTE:
        return max(others) + delta
    return min(others) - delta


def solve_reward(
    q: np.ndarray,
    s: int,
    a: int,
    s_next: int,
    goal: Goal,
    delta: float,
    spec: LearnerSpec,
    a_next: Optional[int] = None,
) -> float:
    """Reward that moves ``q[s, a]`` to the value demanded by ``goal``.

    Inverts the linear update exactly:
    ``r = (target - (1 - alpha) q[s, a]) / alpha - gamma * bootstrap``.
    """
    if q.shape[1] < 2:
        raise InvariantViolation("reward inversion needs at least two actions")
    target = goal_value(q, s, a, goal, delta)
    boot = _bootstrap(q, s_next, a_next, spec)
    return (target - (1.0 - spec.alpha) * float(q[s, a])) / spec.alpha - spec.gamma * boot


def greedy_policy(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-state argmax (lowest index on ties) and a flag for strictness."""
    policy = np.array([argmax_row(row) for row in q.tolist()], dtype=int)
    strict = np.array([is_strict_top(row, a) for row, a in zip(q.tolist(), policy)], dtype=bool)
    return policy, strict


def policy_matches(q: np.ndarray, target) -> bool:
    """Whether every state's target action is the strict argmax."""
    return all(is_strict_top(row, int(a)) for row, a in zip(q.tolist(), target))


def save_qtable(q: np.ndarray, path) -> None:
    Path(path).write_text(json.dumps(np.asarray(q, dtype=float).tolist()) + "\n")


def load_qtable(path, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, list) or not data or not all(isinstance(r, list) for r in data):
        raise ParseError(f"{path}: expected a JSON matrix")
    widths = {len(r) for r in data}
    if len(widths) != 1:
        raise ParseError(f"{path}: rows have differing lengths {sorted(widths)}")
    try:
        q = np.array(data, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{path}: non-numeric entry") from None
    if not np.all(np.isfinite(q)):
        raise InvariantViolation(f"{path}: Q-table entries must be finite")
    if shape is not None and q.shape != tuple(shape):
        raise InvariantViolation(f"{path}: Q-table shape {q.shape} does not match {tuple(shape)}")
    return q


def save_policy(policy, path) -> None:
    Path(path).write_text(json.dumps([int(a) for a in policy]) + "\n")


def load_policy(path, num_states: Optional[int] = None, num_actions: Optional[int] = None) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in data):
        raise ParseError(f"{path}: expected a JSON array of action indices")
    if num_states is not None and len(data) != num_states:
        raise InvariantViolation(f"{path}: policy length {len(data)} != {num_states}")
    if num_actions is not None and any(not 0 <= a < num_actions for a in data):
        raise InvariantViolation(f"{path}: action index out of range")
    return np.array(data, dtype=int)


def check_finite(q: np.ndarray) -> None:
    if not all(math.isfinite(x) for x in q.ravel().tolist()):
        raise InvariantViolation("Q-table has non-finite entries")
