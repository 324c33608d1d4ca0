"""Closed-form teaching-length formulas and bounds.

All functions are pure. Zero-exploration limits are written out explicitly
instead of dividing by epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from teachdim.errors import DomainError


@dataclass(frozen=True)
class BoundInputs:
    S: int
    A: int
    H: int
    D: int
    epsilon: float = 0.0
    p_min: float = 1.0
    n_blockers: Optional[int] = None

    def __post_init__(self):
        for name in ("S", "A", "H"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be a positive integer")
        if self.D < 0:
            raise DomainError("D must be non-negative")
        if self.A < 2:
            raise DomainError("A must be >= 2")
        if self.D > self.H:
            raise DomainError(f"diameter D={self.D} exceeds horizon H={self.H}")
        if not 0.0 <= self.epsilon < 1.0:
            raise DomainError(f"epsilon {self.epsilon} outside [0, 1)")
        if not 0.0 < self.p_min <= 1.0:
            raise DomainError(f"p_min {self.p_min} outside (0, 1]")
        if self.n_blockers is not None and not 0 <= self.n_blockers <= self.A - 1:
            raise DomainError(f"n_blockers {self.n_blockers} outside [0, {self.A - 1}]")


def _check_visits_args(n: int, A: int, epsilon: float):
    if A < 2:
        raise DomainError("A must be >= 2")
    if not 0 <= n <= A - 1:
        raise DomainError(f"n={n} outside [0, {A - 1}]")
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon {epsilon} outside [0, 1]")


def expected_visits_closed(n: int, A: int, epsilon: float) -> float:
    """Expected visits to fix one state with ``n`` actions ranked above the target.

    ``T(n) = n / (1 - (A - 1 - n) / (A - 1) * epsilon)``.
    """
    _check_visits_args(n, A, epsilon)
    if n == 0:
        return 0.0
    return n / (1.0 - (A - 1 - n) / (A - 1) * epsilon)


def expected_visits_recursion(n: int, A: int, epsilon: float) -> float:
    """Same quantity, by solving the one-visit recursion upward from ``T(0) = 0``.

    Each visit either demotes a blocker (probability
    ``1 - eps + (k - 1) eps / (A - 1)``), hits the target (``eps / (A - 1)``)
    or wastes the visit on an already-lower action, which leaves ``T(k)`` on
    both sides; that self-reference is solved for ``T(k)`` at each level.
    """
    _check_visits_args(n, A, epsilon)
    e = epsilon / (A - 1)
    T = [0.0]
    for k in range(1, n + 1):
        p_down = 1.0 - epsilon + (k - 1) * e
        p_hit = e
        p_waste = (A - k - 1) * e
        T.append((1.0 + p_down * T[k - 1] + p_hit * T[0]) / (1.0 - p_waste))
    return T[n]


def _growth(epsilon: float, p_min: float = 1.0) -> float:
    return 1.0 / (p_min * (1.0 - epsilon))


def tdim_bounds(level: int, inputs: BoundInputs, sarsa: bool = False) -> Tuple[float, float]:
    """(lower, upper) teaching-dimension values for a teacher level.

    Levels 1 and 2 are exact. Levels 3 and 4 use the explicit constants of
    the hard-instance and NavTeach arguments. With ``sarsa`` the upper value
    grows by one step (levels 1-2) or doubles (levels 3-4).
    """
    S, A, H, D = inputs.S, inputs.A, inputs.H, inputs.D
    if level == 1:
        lo = hi = float(S)
    elif level == 2:
        lo = hi = float(S * (A - 1))
    elif level in (3, 4):
        if S < D + 2:
            raise DomainError(f"levels 3-4 need S >= D + 2, got S={S}, D={D}")
        if level == 3:
            g = _growth(inputs.epsilon) ** D
            lo = (S - D - 1) * (A - 1) * H * g
        else:
            g = _growth(inputs.epsilon, inputs.p_min) ** D
            lo = 0.5 * (S - D) * (A - 1) * H * g
        hi = (2 * S - 1) * (A - 1) * H * g
    else:
        raise DomainError(f"unknown teacher level {level}")
    if sarsa:
        hi = hi + 1 if level in (1, 2) else 2 * hi
    return lo, hi


def neck_travel_steps(H: int, D: int, epsilon: float) -> float:
    """Total time to reach one state at each depth ``0..D-1``.

    Equals ``H (1 - eps) / eps * ((1 - eps)^-D - 1)``; at ``eps = 0`` the
    limit ``H * D`` is returned.
    """
    if not 0.0 <= epsilon < 1.0:
        raise DomainError(f"epsilon {epsilon} outside [0, 1)")
    if epsilon == 0.0:
        return float(H * D)
    # (1 - eps)^-D - 1 without cancellation for small eps
    grow = math.expm1(-D * math.log1p(-epsilon))
    return H * (1.0 - epsilon) / epsilon * grow


def tight_theta_level3(inputs: BoundInputs) -> Tuple[float, float]:
    """Refined level-3 bounds that agree up to a factor approaching two."""
    S, A, H, D = inputs.S, inputs.A, inputs.H, inputs.D
    if S < D + 2:
        raise DomainError(f"need S >= D + 2, got S={S}, D={D}")
    g = _growth(inputs.epsilon) ** D
    extra = neck_travel_steps(H, D, inputs.epsilon)
    lower = (S - D - 1) * (A - 1) * H * g + extra
    upper = (2 * S - 1 - 2 * D) * (A - 1) * H * g + extra
    return lower, upper


def sarsa_worstcase_visits(A: int) -> float:
    if A < 2:
        raise DomainError("A must be >= 2")
    return float(2 * A - 2)


def step_upper_bound(mdp, spec, level: int) -> float:
    """Upper teaching-length value for a concrete instance, used for step budgets.

    Unlike :func:`tdim_bounds` this never refuses small instances: the
    NavTeach value ``(2S - 1)(A - 1) H g^D`` is meaningful for any S.
    """
    from teachdim.learner import Rule
    from teachdim.mdp import diameter, min_transition_prob

    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    sarsa = spec.rule is Rule.SARSA
    if level == 1:
        return S + (1 if sarsa else 0)
    if level == 2:
        return S * (A - 1) + (1 if sarsa else 0)
    if spec.epsilon >= 1.0:
        return math.inf
    D = diameter(mdp)
    p = 1.0 if level == 3 else min_transition_prob(mdp)
    g = _growth(spec.epsilon, p) ** D
    hi = (2 * S - 1) * (A - 1) * H * g
    return 2 * hi if sarsa else hi
