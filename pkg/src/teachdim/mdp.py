"""Episodic tabular MDPs, structural quantities, hard-instance generators and
BFS navigation plans.

Actions are zero-indexed throughout, so the "forward" action of the peacock
families is action 0 and the second branch action of a peacock tree is action 1.
"""

from __future__ import annotations

import bisect
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from teachdim.errors import InvalidShape, InvariantViolation, ParseError, UnreachableState

PROB_TOL = 1e-9

Row = Tuple[Tuple[int, float], ...]


@dataclass(frozen=True, eq=True)
class Mdp:
    """Episodic tabular MDP with sparse transitions.

    ``transitions`` maps every ``(state, action)`` pair to a tuple of
    ``(next_state, probability)`` entries with strictly positive
    probabilities. Rows are stored sorted by next state so that two MDPs with
    the same dynamics compare equal.
    """

    num_states: int
    num_actions: int
    transitions: Dict[Tuple[int, int], Row]
    initial_dist: Tuple[float, ...]
    horizon: int
    base_reward: Optional[Tuple[Tuple[float, ...], ...]] = None

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if not isinstance(S, int) or S < 1:
            raise InvariantViolation(f"num_states must be a positive integer, got {S!r}")
        if not isinstance(A, int) or A < 2:
            raise InvariantViolation(f"num_actions must be >= 2, got {A!r}")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise InvariantViolation(f"horizon must be a positive integer, got {self.horizon!r}")

        canon = {}
        for key, row in self.transitions.items():
            s, a = key
            if not (0 <= s < S and 0 <= a < A):
                raise InvariantViolation(f"transition key {key} out of range")
            entries = sorted((int(n), float(p)) for n, p in row)
            if not entries:
                raise InvariantViolation(f"empty transition row at {key}")
            seen = set()
            total = 0.0
            for n, p in entries:
                if not 0 <= n < S:
                    raise InvariantViolation(f"next state {n} out of range at {key}")
                if n in seen:
                    raise InvariantViolation(f"duplicate next state {n} at {key}")
                if not (0.0 < p <= 1.0):
                    raise InvariantViolation(f"probability {p} at {key} is not in (0, 1]")
                seen.add(n)
                total += p
            if abs(total - 1.0) > PROB_TOL:
                raise InvariantViolation(f"row {key} sums to {total}, not 1")
            canon[(int(s), int(a))] = tuple(entries)
        missing = [(s, a) for s in range(S) for a in range(A) if (s, a) not in canon]
        if missing:
            raise InvariantViolation(f"missing transition rows, first is {missing[0]}")
        object.__setattr__(self, "transitions", canon)

        mu0 = tuple(float(x) for x in self.initial_dist)
        if len(mu0) != S:
            raise InvariantViolation(f"mu0 has length {len(mu0)}, expected {S}")
        if any(x < 0 for x in mu0) or not any(x > 0 for x in mu0):
            raise InvariantViolation("mu0 must be non-negative with at least one positive entry")
        if abs(sum(mu0) - 1.0) > PROB_TOL:
            raise InvariantViolation(f"mu0 sums to {sum(mu0)}, not 1")
        object.__setattr__(self, "initial_dist", mu0)

        if self.base_reward is not None:
            rew = tuple(tuple(float(x) for x in row) for row in self.base_reward)
            if len(rew) != S or any(len(row) != A for row in rew):
                raise InvariantViolation("base_reward must be an S x A matrix")
            if not all(math.isfinite(x) for row in rew for x in row):
                raise InvariantViolation("base_reward entries must be finite")
            object.__setattr__(self, "base_reward", rew)

    # derived views, computed once per instance

    @cached_property
    def _supports(self) -> List[List[Tuple[int, ...]]]:
        return [
            [tuple(n for n, _ in self.transitions[(s, a)]) for a in range(self.num_actions)]
            for s in range(self.num_states)
        ]

    @cached_property
    def _support_sets(self) -> List[List[frozenset]]:
        return [[frozenset(sup) for sup in row] for row in self._supports]

    @cached_property
    def _cumulative(self) -> List[List[List[float]]]:
        out = []
        for s in range(self.num_states):
            per_action = []
            for a in range(self.num_actions):
                acc, cum = 0.0, []
                for _, p in self.transitions[(s, a)]:
                    acc += p
                    cum.append(acc)
                cum[-1] = 1.0
                per_action.append(cum)
            out.append(per_action)
        return out

    @cached_property
    def start_states(self) -> Tuple[int, ...]:
        return tuple(s for s, p in enumerate(self.initial_dist) if p > 0)

    @cached_property
    def successors(self) -> List[Tuple[int, ...]]:
        """Sorted out-neighbours of each state in the support digraph."""
        return [
            tuple(sorted({n for a in range(self.num_actions) for n in self._supports[s][a]}))
            for s in range(self.num_states)
        ]

    def support(self, s: int, a: int) -> Tuple[int, ...]:
        return self._supports[s][a]

    def supports(self, s: int, a: int, s_next: int) -> bool:
        return s_next in self._support_sets[s][a]

    def prob(self, s: int, a: int, s_next: int) -> float:
        for n, p in self.transitions[(s, a)]:
            if n == s_next:
                return p
        return 0.0

    def reward(self, s: int, a: int) -> float:
        if self.base_reward is None:
            return 0.0
        return self.base_reward[s][a]

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        sup = self._supports[s][a]
        if len(sup) == 1:
            return sup[0]
        return sup[bisect.bisect_right(self._cumulative[s][a], rng.random())]

    def sample_initial(self, rng: np.random.Generator) -> int:
        starts = self.start_states
        if len(starts) == 1:
            return starts[0]
        probs = np.array(self.initial_dist)
        return int(rng.choice(self.num_states, p=probs / probs.sum()))

    def transition_matrix(self) -> np.ndarray:
        """Dense ``(S, A, S)`` array of transition probabilities."""
        P = np.zeros((self.num_states, self.num_actions, self.num_states))
        for (s, a), row in self.transitions.items():
            for n, p in row:
                P[s, a, n] = p
        return P


def bfs_distances(mdp: Mdp, sources: Sequence[int]) -> List[Optional[int]]:
    """Unit-length shortest distances from any of ``sources`` in the support digraph."""
    dist: List[Optional[int]] = [None] * mdp.num_states
    queue = deque()
    for s in sources:
        if dist[s] is None:
            dist[s] = 0
            queue.append(s)
    while queue:
        u = queue.popleft()
        for v in mdp.successors[u]:
            if dist[v] is None:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def diameter(mdp: Mdp) -> int:
    """Largest shortest-path distance from the nearest supported start state."""
    dist = bfs_distances(mdp, mdp.start_states)
    for s, d in enumerate(dist):
        if d is None:
            raise UnreachableState(s)
    return max(dist)


def min_transition_prob(mdp: Mdp) -> float:
    return min(p for row in mdp.transitions.values() for _, p in row)


def _absorbing_rows(mdp_rows: dict, state: int, absorbing: int, A: int):
    for a in range(A):
        mdp_rows[(state, a)] = ((absorbing, 1.0),)


def _complement(p: float, k: int = 1) -> float:
    # 1 - k*p evaluated on the decimal the caller typed, so p=0.2, k=4 gives 0.2
    return float(1 - Fraction(repr(p)) * k)


def _forward_row(target: int, p: float, absorbing: int) -> Row:
    if p >= 1.0:
        return ((target, 1.0),)
    return ((target, p), (absorbing, _complement(p)))


def make_peacock(S: int, D: int, A: int, H: int, p: float) -> Mdp:
    """Neck of ``D`` states, a star of ``S - D - 1`` tail states, one absorbing state.

    Neck state ``i`` moves to neck state ``i + 1`` under action 0 with
    probability ``p``; the last neck state sends ``p`` to each tail state. Any
    mass not placed on a successor goes to the absorbing state ``S - 1``, as
    do all other actions and every action taken in a tail state.
    """
    if D < 1 or S < D + 2:
        raise InvalidShape(f"peacock needs D >= 1 and S >= D + 2, got S={S}, D={D}")
    if A < 2:
        raise InvalidShape("peacock needs at least two actions")
    if H < D + 1:
        raise InvalidShape(f"horizon {H} too short to cross a neck of length {D}")
    n_tail = S - D - 1
    if not (0.0 < p <= 1.0) or p * n_tail > 1.0 + PROB_TOL:
        raise InvalidShape(f"p={p} must lie in (0, 1/{n_tail}]")

    absorbing = S - 1
    tails = list(range(D, D + n_tail))
    rows = {}
    for i in range(D):
        if i < D - 1:
            rows[(i, 0)] = _forward_row(i + 1, p, absorbing)
        else:
            rest = _complement(p, n_tail)
            fan = [(t, p) for t in tails]
            if rest > PROB_TOL:
                fan.append((absorbing, rest))
            rows[(i, 0)] = tuple(fan)
        for a in range(1, A):
            rows[(i, a)] = ((absorbing, 1.0),)
    for t in tails + [absorbing]:
        _absorbing_rows(rows, t, absorbing, A)

    mu0 = [0.0] * S
    mu0[0] = 1.0
    return Mdp(S, A, rows, tuple(mu0), H)


def peacock_tree_depth(S: int, D: int) -> int:
    """Smallest binary-tree depth ``d`` with ``2^d + D - d + 1 <= S <= 2^(d+1) + D - d``."""
    for d in range(0, D + 1):
        if 2**d + (D - d + 1) <= S <= 2 ** (d + 1) + (D - d):
            return d
    raise InvalidShape(f"no binary-tree depth fits S={S}, D={D}")


def make_peacock_tree(
    S: Optional[int] = None,
    D: int = 3,
    A: int = 2,
    H: int = 8,
    p_min: float = 0.5,
    d: Optional[int] = None,
) -> Mdp:
    """Chain of ``D - d`` states feeding a complete binary tree of depth ``d``.

    Either ``S`` or ``d`` selects the tree depth; the tree is always completed,
    so the returned MDP has exactly ``2^(d+1) + D - d`` states (the last one
    absorbing). Chain states step forward under action 0; internal tree nodes
    reach their first child under action 0 and their second child under
    action 1, each with probability ``p_min``.
    """
    if d is None:
        if S is None:
            raise InvalidShape("give either S or d")
        d = peacock_tree_depth(S, D)
    if not (0 <= d <= D):
        raise InvalidShape(f"tree depth d={d} must lie in [0, D={D}]")
    if A < 2:
        raise InvalidShape("peacock tree needs at least two actions")
    if H < D + 1:
        raise InvalidShape(f"horizon {H} too short to reach depth {D}")
    if not (0.0 < p_min <= 1.0):
        raise InvalidShape(f"p_min={p_min} must lie in (0, 1]")
    n_chain = D - d
    n_tree = 2 ** (d + 1) - 1
    total = n_chain + n_tree + 1
    if S is not None and S > total:
        raise InvalidShape(f"S={S} exceeds the completed size {total}")
    absorbing = total - 1
    tree0 = n_chain

    rows = {}
    for i in range(n_chain):
        rows[(i, 0)] = _forward_row(i + 1, p_min, absorbing)
        for a in range(1, A):
            rows[(i, a)] = ((absorbing, 1.0),)
    first_leaf = 2**d - 1
    for k in range(n_tree):
        s = tree0 + k
        if k < first_leaf:
            rows[(s, 0)] = _forward_row(tree0 + 2 * k + 1, p_min, absorbing)
            rows[(s, 1)] = _forward_row(tree0 + 2 * k + 2, p_min, absorbing)
            for a in range(2, A):
                rows[(s, a)] = ((absorbing, 1.0),)
        else:
            _absorbing_rows(rows, s, absorbing, A)
    _absorbing_rows(rows, absorbing, absorbing, A)

    mu0 = [0.0] * total
    mu0[0] = 1.0
    return Mdp(total, A, rows, tuple(mu0), H)


def peacock_tree_leaves(mdp: Mdp, D: int) -> List[int]:
    """States at depth ``D`` of a peacock tree (its leaves)."""
    dist = bfs_distances(mdp, mdp.start_states)
    return [s for s, dd in enumerate(dist) if dd == D and s != mdp.num_states - 1]


def make_chain(S: int, A: int = 2, H: Optional[int] = None) -> Mdp:
    """Deterministic chain: action 0 steps right, every other action stays put."""
    if S < 1:
        raise InvalidShape("chain needs at least one state")
    if A < 2:
        raise InvalidShape("chain needs at least two actions")
    rows = {}
    for s in range(S):
        rows[(s, 0)] = ((min(s + 1, S - 1), 1.0),)
        for a in range(1, A):
            rows[(s, a)] = ((s, 1.0),)
    mu0 = [0.0] * S
    mu0[0] = 1.0
    return Mdp(S, A, rows, tuple(mu0), H if H is not None else max(S, 1))


def make_random(
    S: int,
    A: int,
    density: float = 0.3,
    seed: int = 0,
    H: Optional[int] = None,
) -> Mdp:
    """Random sparse MDP with every state reachable from state 0.

    Each row keeps every state independently with probability ``density``
    (at least one), then a random Hamiltonian chain rooted at state 0 is
    spliced in so the support digraph is connected from the start.
    """
    if S < 1 or A < 2:
        raise InvalidShape(f"random MDP needs S >= 1 and A >= 2, got S={S}, A={A}")
    if not (0.0 < density <= 1.0):
        raise InvalidShape(f"density {density} must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    supports = {}
    for s in range(S):
        for a in range(A):
            mask = rng.random(S) < density
            if not mask.any():
                mask[rng.integers(S)] = True
            supports[(s, a)] = set(np.flatnonzero(mask).tolist())
    order = [0] + (rng.permutation(S - 1) + 1).tolist()
    for u, v in zip(order[:-1], order[1:]):
        supports[(u, int(rng.integers(A)))].add(v)
    rows = {}
    for key in sorted(supports):
        nxt = sorted(supports[key])
        w = rng.dirichlet(np.ones(len(nxt)))
        probs = [float(x) for x in w]
        probs[-1] = 1.0 - sum(probs[:-1])
        if probs[-1] <= 0.0:
            probs = [1.0 / len(nxt)] * len(nxt)
        rows[key] = tuple(zip(nxt, probs))
    mu0 = [0.0] * S
    mu0[0] = 1.0
    mdp = Mdp(S, A, rows, tuple(mu0), 1)
    horizon = H if H is not None else diameter(mdp) + 2
    return Mdp(S, A, rows, tuple(mu0), horizon)


@dataclass(frozen=True)
class NavPlan:
    """Breadth-first navigation tree with a post-order subtask schedule."""

    root: int
    parent_edge: Dict[int, Tuple[int, int]]
    depth: Dict[int, int]
    subtask_order: Tuple[int, ...]
    ancestral_path: Dict[int, Tuple[Tuple[int, int], ...]] = field(repr=False)

    @property
    def tree_depth(self) -> int:
        return max(self.depth.values())

    def children(self, s: int) -> List[int]:
        return sorted(c for c, (p, _) in self.parent_edge.items() if p == s)

    def path_states(self, s: int) -> Tuple[int, ...]:
        """States visited from the root to ``s`` inclusive."""
        return tuple(u for u, _ in self.ancestral_path[s]) + (s,)


def _bfs_tree(mdp: Mdp, root: int) -> Tuple[Dict[int, Tuple[int, int]], Dict[int, int]]:
    parent: Dict[int, Tuple[int, int]] = {}
    depth = {root: 0}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for a in range(mdp.num_actions):
            for v in mdp.support(u, a):
                if v not in depth:
                    depth[v] = depth[u] + 1
                    parent[v] = (u, a)
                    queue.append(v)
    return parent, depth


def build_nav_plan(mdp: Mdp) -> NavPlan:
    """Minimum-depth BFS tree over supported roots, ties to the lowest index."""
    best = None
    fallback = None
    for root in mdp.start_states:
        parent, depth = _bfs_tree(mdp, root)
        if len(depth) < mdp.num_states:
            if fallback is None or len(depth) > len(fallback):
                fallback = depth
            continue
        tree_depth = max(depth.values())
        if best is None or tree_depth < best[0]:
            best = (tree_depth, root, parent, depth)
    if best is None:
        missing = min(s for s in range(mdp.num_states) if s not in fallback)
        raise UnreachableState(missing, f"no supported start reaches state {missing}")
    _, root, parent, depth = best

    kids: Dict[int, List[int]] = {s: [] for s in range(mdp.num_states)}
    for child, (p, _) in parent.items():
        kids[p].append(child)
    for lst in kids.values():
        lst.sort()

    order: List[int] = []
    stack = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i < len(kids[node]):
            stack.append((node, i + 1))
            stack.append((kids[node][i], 0))
        else:
            order.append(node)

    paths: Dict[int, Tuple[Tuple[int, int], ...]] = {root: ()}
    for s in sorted(depth, key=depth.__getitem__):
        if s != root:
            p, a = parent[s]
            paths[s] = paths[p] + ((p, a),)

    return NavPlan(root, parent, depth, tuple(order), paths)


def mdp_to_dict(mdp: Mdp) -> dict:
    out = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "mu0": list(mdp.initial_dist),
        "transitions": [
            {"s": s, "a": a, "next": [[n, p] for n, p in mdp.transitions[(s, a)]]}
            for s in range(mdp.num_states)
            for a in range(mdp.num_actions)
        ],
    }
    if mdp.base_reward is not None:
        out["base_reward"] = [list(row) for row in mdp.base_reward]
    return out


def _field(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field '{key}'")
    val = obj[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise ParseError(f"{where}.{key}: expected integer, got {val!r}")
    if kind is list and not isinstance(val, list):
        raise ParseError(f"{where}.{key}: expected list, got {type(val).__name__}")
    return val


def mdp_from_dict(data: dict) -> Mdp:
    S = _field(data, "num_states", int, "mdp")
    A = _field(data, "num_actions", int, "mdp")
    H = _field(data, "horizon", int, "mdp")
    mu0 = _field(data, "mu0", list, "mdp")
    rows = {}
    for i, entry in enumerate(_field(data, "transitions", list, "mdp")):
        where = f"transitions[{i}]"
        s = _field(entry, "s", int, where)
        a = _field(entry, "a", int, where)
        nxt = _field(entry, "next", list, where)
        try:
            row = tuple((int(n), float(p)) for n, p in nxt)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}.next: expected [[state, prob], ...] ({exc})") from None
        if (s, a) in rows:
            raise ParseError(f"{where}: duplicate row for (s={s}, a={a})")
        rows[(s, a)] = row
    try:
        mu0 = tuple(float(x) for x in mu0)
    except (TypeError, ValueError):
        raise ParseError("mdp.mu0: expected a list of numbers") from None
    reward = data.get("base_reward")
    if reward is not None:
        try:
            reward = tuple(tuple(float(x) for x in row) for row in reward)
        except (TypeError, ValueError):
            raise ParseError("mdp.base_reward: expected an S x A matrix of numbers") from None
    return Mdp(S, A, rows, mu0, H, reward)


def save_mdp(mdp: Mdp, path) -> None:
    # json writes floats with repr, which round-trips every double exactly
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n")


def load_mdp(path) -> Mdp:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return mdp_from_dict(data)
