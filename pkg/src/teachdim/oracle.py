"""Exact covering-walk solvers and the covering-walk -> teaching reduction.

On reduction instances a level-3 teacher's best session visits every state
once along a shortest covering walk, so the walk length computed here is the
exact minimum teaching length (counted in transitions; the session itself
has one more step than the walk has edges).
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from teachdim.errors import (
    CertificationFailure,
    InvariantViolation,
    ParseError,
    TooLarge,
    UnreachableState,
)
from teachdim.learner import Goal, LearnerSpec, is_strict_top
from teachdim.mdp import Mdp
from teachdim.teacher import Teacher, TeacherDecision, TeachingProblem

HELD_KARP_MAX = 20
BRUTE_FORCE_MAX = 9
MINIMALITY_MAX = 12
CERTIFY_EPSILONS = (0.0, 0.3, 0.7)


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: Tuple[Tuple[int, int, int], ...]
    start: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvariantViolation("graph needs at least one vertex")
        if not 0 <= self.start < self.n:
            raise InvariantViolation(f"start {self.start} out of range")
        clean = []
        for e in self.edges:
            u, v, w = (int(x) for x in e)
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise InvariantViolation(f"edge {e} out of range")
            if w < 1 or w != e[2]:
                raise InvariantViolation(f"edge {e} needs an integer weight >= 1")
            clean.append((u, v, w))
        object.__setattr__(self, "edges", tuple(clean))

    def out_neighbors(self) -> List[List[int]]:
        nbrs: List[set] = [set() for _ in range(self.n)]
        for u, v, _ in self.edges:
            nbrs[u].add(v)
        return [sorted(x) for x in nbrs]

    def weight_matrix(self) -> np.ndarray:
        W = np.full((self.n, self.n), np.inf)
        for u, v, w in self.edges:
            W[u, v] = min(W[u, v], w)
        return W

    @property
    def unit_weights(self) -> bool:
        return all(w == 1 for _, _, w in self.edges)


def _check_reachable(g: Digraph, dist_from_start) -> None:
    for v in range(g.n):
        if not np.isfinite(dist_from_start[v]):
            raise UnreachableState(v, f"vertex {v} unreachable from start {g.start}")


def metric_closure(g: Digraph) -> Tuple[np.ndarray, np.ndarray]:
    """Floyd-Warshall distances and next-hop table."""
    n = g.n
    dist = g.weight_matrix()
    np.fill_diagonal(dist, 0.0)
    nxt = np.where(np.isfinite(dist), np.arange(n)[None, :], -1)
    for k in range(n):
        alt = dist[:, k, None] + dist[None, k, :]
        better = alt < dist
        dist = np.where(better, alt, dist)
        nxt = np.where(better, nxt[:, k, None], nxt)
    return dist, nxt


def _expand(nxt: np.ndarray, u: int, v: int) -> List[int]:
    path = [u]
    while u != v:
        u = int(nxt[u, v])
        path.append(u)
    return path


def atsp_held_karp(g: Digraph) -> Tuple[int, List[int]]:
    """Shortest walk from ``g.start`` that visits every vertex.

    Subset DP over visit orders on the metric closure, then each closure hop
    is expanded back into graph edges.
    """
    if g.n > HELD_KARP_MAX:
        raise TooLarge(f"Held-Karp limited to {HELD_KARP_MAX} vertices, got {g.n}")
    dist, nxt = metric_closure(g)
    _check_reachable(g, dist[g.start])
    if g.n == 1:
        return 0, [g.start]

    others = [v for v in range(g.n) if v != g.start]
    m = len(others)
    sub = dist[np.ix_(others, others)]
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int8)
    for j in range(m):
        dp[1 << j, j] = dist[g.start, others[j]]

    masks = np.arange(full, dtype=np.int64)
    pop = np.zeros(full, dtype=np.int64)
    for j in range(m):
        pop += (masks >> j) & 1
    for k in range(2, m + 1):
        layer = masks[pop == k]
        for j in range(m):
            sel = layer[((layer >> j) & 1) == 1]
            prev = sel ^ (1 << j)
            cand = dp[prev] + sub[:, j][None, :]
            best = np.argmin(cand, axis=1)
            dp[sel, j] = cand[np.arange(len(sel)), best]
            parent[sel, j] = best

    last = int(np.argmin(dp[full - 1]))
    length = dp[full - 1, last]
    order = []
    mask, j = full - 1, last
    while j >= 0:
        order.append(others[j])
        pj = int(parent[mask, j])
        mask ^= 1 << j
        j = pj if mask else -1
    order.reverse()

    walk = [g.start]
    for v in order:
        walk.extend(_expand(nxt, walk[-1], v)[1:])
    return int(round(length)), walk


def _dijkstra(adj: List[List[Tuple[int, int]]], src: int) -> List[float]:
    dist = [float("inf")] * len(adj)
    dist[src] = 0
    heap = [(0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return dist


def atsp_brute_force(g: Digraph) -> int:
    """Exhaustive minimum over all visit orders, with Dijkstra distances."""
    if g.n > BRUTE_FORCE_MAX:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_MAX} vertices, got {g.n}")
    adj: List[List[Tuple[int, int]]] = [[] for _ in range(g.n)]
    for u, v, w in g.edges:
        adj[u].append((v, w))
    dist = [_dijkstra(adj, u) for u in range(g.n)]
    for v in range(g.n):
        if dist[g.start][v] == float("inf"):
            raise UnreachableState(v, f"vertex {v} unreachable from start {g.start}")
    others = [v for v in range(g.n) if v != g.start]
    best = 0 if not others else float("inf")
    for perm in itertools.permutations(others):
        total, u = 0, g.start
        for v in perm:
            total += dist[u][v]
            if total >= best:
                break
            u = v
        else:
            best = total
    return int(best)


def graph_diameter_from_start(g: Digraph) -> int:
    """Largest hop distance from the start vertex."""
    nbrs = g.out_neighbors()
    dist = {g.start: 0}
    queue = deque([g.start])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    for v in range(g.n):
        if v not in dist:
            raise UnreachableState(v, f"vertex {v} unreachable from start {g.start}")
    return max(dist.values())


def reduction_horizon(g: Digraph) -> int:
    return max(1, graph_diameter_from_start(g) ** 2)


def reduce_atsp_to_teaching(
    g: Digraph,
    spec: Optional[LearnerSpec] = None,
    horizon: Optional[int] = None,
) -> TeachingProblem:
    """Teaching instance whose level-3 minimum length is the covering-walk length.

    One state per vertex, two actions that share the vertex's out-edges
    (uniform probabilities), start concentrated on ``g.start``, horizon the
    squared hop diameter unless overridden, a Q0 that prefers action 0 and
    the all-action-1 target. Vertices without out-edges get a self-loop so
    every row is a distribution; a self-loop never shortens a covering walk.
    """
    if not g.unit_weights:
        raise InvariantViolation("the reduction is defined for unit edge weights")
    if g.n > HELD_KARP_MAX:
        raise TooLarge(f"reduction limited to {HELD_KARP_MAX} vertices")
    H = horizon if horizon is not None else reduction_horizon(g)
    rows = {}
    for u, nbrs in enumerate(g.out_neighbors()):
        nbrs = nbrs or [u]
        p = 1.0 / len(nbrs)
        row = tuple((v, p) for v in nbrs)
        rows[(u, 0)] = row
        rows[(u, 1)] = row
    mu0 = [0.0] * g.n
    mu0[g.start] = 1.0
    mdp = Mdp(g.n, 2, rows, tuple(mu0), H)
    q0 = np.tile([1.0, 0.0], (g.n, 1))
    target = np.ones(g.n, dtype=int)
    return TeachingProblem(mdp, spec or LearnerSpec(), q0, target)


def graph_from_reduction(problem: TeachingProblem) -> Digraph:
    mdp = problem.mdp
    edges = [(s, n, 1) for s in range(mdp.num_states) for n in mdp.support(s, 0) if n != s]
    if len(mdp.start_states) != 1:
        raise InvariantViolation("reduction instances start from a single state")
    return Digraph(mdp.num_states, tuple(edges), mdp.start_states[0])


class WalkReplayTeacher(Teacher):
    """Level-3 teacher that drives the learner along a fixed covering walk.

    Each newly reached state is taught in one visit (promote the target if
    the learner picked it, demote the other action otherwise); states seen
    before are left unchanged.
    """

    level = 3

    def __init__(self, problem: TeachingProblem, walk: Sequence[int], delta: float = 1.0):
        super().__init__(problem, delta)
        self.walk = list(walk)
        self.pos = 0

    def initial_state(self, rng):
        self.pos = 0
        return self.walk[0]

    def decide(self, q, s, a, rng=None, sampled_next=None):
        if s != self.walk[self.pos]:
            raise CertificationFailure(f"learner at {s}, walk expects {self.walk[self.pos]}")
        if is_strict_top(q[s].tolist(), self.target[s]):
            dec = TeacherDecision(Goal.MAINTAIN, branch="replay")
        else:
            goal = Goal.PROMOTE if a == self.target[s] else Goal.DEMOTE
            dec = TeacherDecision(goal, branch="teach", subtask=s)
        if self.pos + 1 < len(self.walk):
            self.pos += 1
            dec.next_state = self.walk[self.pos]
        else:
            dec.next_state = self._random_support(s, a, rng)
        return self._finish(dec, q, s, a, dec.next_state)


def min_teaching_steps(g: Digraph) -> int:
    """Fewest teaching steps over all level-3 next-state choices on the reduction.

    Breadth-first search over (current state, untaught set); each step
    teaches the current state and moves to any out-neighbour. Valid because
    with two actions one visit always finishes a state.
    """
    if g.n > MINIMALITY_MAX:
        raise TooLarge(f"minimality search limited to {MINIMALITY_MAX} vertices")
    nbrs = [x or [u] for u, x in enumerate(g.out_neighbors())]
    full = (1 << g.n) - 1
    start = (g.start, full)
    seen = {start: 0}
    queue = deque([start])
    while queue:
        v, mask = queue.popleft()
        steps = seen[(v, mask)] + 1
        rest = mask & ~(1 << v)
        if rest == 0:
            return steps
        for u in nbrs[v]:
            key = (u, rest)
            if key not in seen:
                seen[key] = steps
                queue.append(key)
    raise UnreachableState(-1, "some vertex is unreachable from the start")


@dataclass
class Certificate:
    length: int
    walk: List[int]
    certified_epsilons: List[float]
    session_steps: Dict[str, int] = field(default_factory=dict)
    horizon: int = 0
    reduction_horizon: int = 0
    horizon_sufficient: bool = True

    def to_json(self) -> dict:
        return asdict(self)


def certify_reduction(
    g: Digraph,
    epsilons: Sequence[float] = CERTIFY_EPSILONS,
    seed: int = 0,
    alpha: float = 0.5,
    gamma: float = 0.9,
) -> Certificate:
    """Held-Karp length plus a replayed session per epsilon that must match it.

    The session runs without an episode reset: when the squared diameter is
    shorter than the walk the horizon is raised to ``length + 1`` and the
    certificate records that the original horizon was insufficient.
    """
    length, walk = atsp_held_karp(g)
    h_red = reduction_horizon(g)
    H = max(h_red, length + 1)
    steps_by_eps = {}
    for eps in epsilons:
        spec = LearnerSpec(epsilon=eps, alpha=alpha, gamma=gamma)
        problem = reduce_atsp_to_teaching(g, spec, horizon=H)
        from teachdim.harness import run_session

        res = run_session(problem, 3, teacher=WalkReplayTeacher(problem, walk), seed=seed)
        steps_by_eps[repr(float(eps))] = res.total_steps
        if not res.terminated or res.total_steps - 1 != length:
            raise CertificationFailure(
                f"epsilon={eps}: replay took {res.total_steps} steps for a walk of length {length}"
            )
    return Certificate(
        length=length,
        walk=walk,
        certified_epsilons=[float(e) for e in epsilons],
        session_steps=steps_by_eps,
        horizon=H,
        reduction_horizon=h_red,
        horizon_sufficient=h_red >= length + 1,
    )


def exact_metal_reduction_instance(problem: TeachingProblem, seed: int = 0) -> int:
    """Certified minimum teaching length (in transitions) of a reduction instance."""
    g = graph_from_reduction(problem)
    cert = certify_reduction(g, seed=seed, alpha=problem.spec.alpha, gamma=problem.spec.gamma)
    return cert.length


def random_digraph(
    n: int,
    seed: int = 0,
    edge_prob: float = 0.3,
    max_weight: int = 1,
) -> Digraph:
    """Strongly connected random digraph: a random Hamiltonian cycle plus extra edges."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n).tolist()
    pairs = set()
    if n > 1:
        for i in range(n):
            pairs.add((order[i], order[(i + 1) % n]))
    for u in range(n):
        for v in range(n):
            if u != v and rng.random() < edge_prob:
                pairs.add((u, v))
    edges = tuple(
        (u, v, int(rng.integers(1, max_weight + 1))) for u, v in sorted(pairs)
    )
    return Digraph(n, edges, int(rng.integers(n)))


def complete_digraph(n: int) -> Digraph:
    return Digraph(n, tuple((u, v, 1) for u in range(n) for v in range(n) if u != v), 0)


def cycle_digraph(n: int) -> Digraph:
    return Digraph(n, tuple((u, (u + 1) % n, 1) for u in range(n)), 0)


def save_digraph(g: Digraph, path) -> None:
    data = {"n": g.n, "start": g.start, "edges": [list(e) for e in g.edges]}
    Path(path).write_text(json.dumps(data) + "\n")


def load_digraph(path) -> Digraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    for key in ("n", "start", "edges"):
        if not isinstance(data, dict) or key not in data:
            raise ParseError(f"{path}: missing field '{key}'")
    try:
        edges = tuple((int(u), int(v), int(w)) for u, v, w in data["edges"])
    except (TypeError, ValueError):
        raise ParseError(f"{path}: edges must be [[u, v, w], ...]") from None
    return Digraph(int(data["n"]), edges, int(data["start"]))


def save_certificate(cert: Certificate, path) -> None:
    Path(path).write_text(json.dumps(cert.to_json(), indent=1) + "\n")
