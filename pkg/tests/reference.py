"""Independent reference computations used as test oracles.

Nothing here calls into the code under test except for reading public
fields of the objects it produced.
"""

import itertools

import numpy as np


def fw_diameter(mdp):
    """Diameter via a Floyd-Warshall unit-distance closure over the support digraph."""
    S = mdp.num_states
    dist = np.full((S, S), np.inf)
    np.fill_diagonal(dist, 0)
    for (s, _a), row in mdp.transitions.items():
        for n, p in row:
            if p > 0 and s != n:
                dist[s, n] = 1
    for k in range(S):
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    starts = [s for s in range(S) if mdp.initial_dist[s] > 0]
    per_state = dist[starts].min(axis=0)
    return float(per_state.max())


def hand_min_prob(mdp):
    best = 1.0
    for row in mdp.transitions.values():
        for _n, p in row:
            best = min(best, p)
    return best


def permutation_cover_length(n, edges, start):
    """Covering-walk length by BFS distances and every visit order (unit weights only)."""
    INF = float("inf")
    d = [[INF] * n for _ in range(n)]
    for u in range(n):
        d[u][u] = 0
    for u, v, w in edges:
        d[u][v] = min(d[u][v], w)
    for k, i, j in itertools.product(range(n), repeat=3):
        if d[i][k] + d[k][j] < d[i][j]:
            d[i][j] = d[i][k] + d[k][j]
    best = INF
    rest = [v for v in range(n) if v != start]
    for perm in itertools.permutations(rest):
        tot, u = 0, start
        for v in perm:
            tot += d[u][v]
            u = v
        best = min(best, tot)
    return 0 if not rest else best


def validate_trace(records, mdp, level):
    """Check every recorded decision against the powers of ``level`` and all lower levels.

    Returns a list of human-readable violations (empty when the trace is legal).
    Level 1 may do anything; level 2 adds "no action override"; level 3 adds
    "next state in the support of the executed action"; level 4's next
    states come from the environment and so must also be supported.
    """
    problems = []
    for rec in records:
        if rec.branch == "absorbed":
            continue
        if level >= 2 and rec.a != rec.a_agent:
            problems.append(f"t={rec.t}: action overridden at level {level}")
        if level >= 3:
            row = dict(mdp.transitions[(rec.s, rec.a)])
            if row.get(rec.s_next, 0.0) <= 0.0:
                problems.append(f"t={rec.t}: next state {rec.s_next} unsupported from ({rec.s},{rec.a})")
    return problems


def replay_q(records, q0, alpha, gamma, sarsa):
    """Rebuild the final Q-table from a trace, applying SARSA lessons one step late."""
    q = np.array(q0, dtype=float)
    recs = [r for r in records]
    for i, rec in enumerate(recs):
        if rec.branch == "absorbed" or rec.r is None:
            continue
        if sarsa:
            nxt = recs[i + 1] if i + 1 < len(recs) else None
            if nxt is None or nxt.episode != rec.episode:
                continue
            assert nxt.s == rec.s_next
            boot = q[rec.s_next, nxt.a]
        else:
            boot = q[rec.s_next].max()
        q[rec.s, rec.a] = (1 - alpha) * q[rec.s, rec.a] + alpha * (rec.r + gamma * boot)
    return q
