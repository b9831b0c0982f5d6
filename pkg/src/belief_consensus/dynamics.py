"""Discrete-time opinion/belief dynamics with verifiable contraction identities.

Agents hold scalar opinions and beliefs. Supportive collaboration averages
both toward the collaborators; conflicting collaboration averages opinions
but pushes beliefs apart; leader-following averages everyone toward the
leader set (leaders toward the other leaders). Beliefs here are unclamped
reals: the update algebra treats them as abstract scalars, and divergence
must be representable.

Each step admits an exact per-agent increment identity against the frozen
collaborator mean, e.g. for an averaging update with step size g over m
collaborators:

    (v' - mean)^2 - (v - mean)^2 = [(1 - g*m)^2 - 1] * (v - mean)^2

These identities are exposed as helpers so tests and the property suite can
check them algebraically rather than by sign alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
DEFAULT_MAX_STEPS = 10_000
DIVERGENCE_WINDOW = 10  # belief spread strictly increasing this many steps in a row

REASON_CONSENSUS = "consensus"
REASON_MARGINAL = "marginal contraction"
REASON_DIVERGENCE = "belief divergence"
REASON_BUDGET = "step budget exhausted"


@dataclass(frozen=True)
class DynamicsState:
    opinions: np.ndarray
    beliefs: np.ndarray
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "opinions", np.asarray(self.opinions, dtype=float))
        object.__setattr__(self, "beliefs", np.asarray(self.beliefs, dtype=float))
        if self.opinions.shape != self.beliefs.shape or self.opinions.ndim != 1:
            raise ValueError("topology/state arity: opinions and beliefs must be equal-length vectors")
        if len(self.opinions) < 2:
            raise ValueError("need at least 2 agents")


@dataclass(frozen=True)
class DynamicsTopology:
    """Per-agent collaborator sets and step sizes (default alpha = beta = 2/n)."""

    supportive: tuple[tuple[int, ...], ...]
    conflicting: tuple[tuple[int, ...], ...]
    leaders: tuple[int, ...] = ()
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        for i, s in enumerate(self.supportive):
            if i in s:
                raise ValueError(f"agent {i} appears in its own supportive set")
        for i, c in enumerate(self.conflicting):
            if i in c:
                raise ValueError(f"agent {i} appears in its own conflicting set")

    @property
    def n(self) -> int:
        return len(self.supportive)

    def step_sizes(self) -> tuple[float, float]:
        default = 2.0 / self.n
        return (
            default if self.alpha is None else self.alpha,
            default if self.beta is None else self.beta,
        )

    @classmethod
    def all_pairs(cls, n: int, alpha: float | None = None, beta: float | None = None):
        others = tuple(tuple(j for j in range(n) if j != i) for i in range(n))
        empty = tuple(() for _ in range(n))
        return cls(supportive=others, conflicting=empty, alpha=alpha, beta=beta)

    @classmethod
    def mutual_conflict_pairs(cls, n: int, alpha: float | None = None, beta: float | None = None):
        """Pair agents (0,1), (2,3), ...; an odd agent out is isolated."""
        conflicting = []
        for i in range(n):
            partner = i + 1 if i % 2 == 0 else i - 1
            conflicting.append((partner,) if partner < n else ())
        empty = tuple(() for _ in range(n))
        return cls(supportive=empty, conflicting=tuple(conflicting), alpha=alpha, beta=beta)

    @classmethod
    def with_leaders(cls, n: int, leaders: Sequence[int],
                     alpha: float | None = None, beta: float | None = None):
        empty = tuple(() for _ in range(n))
        return cls(supportive=empty, conflicting=empty,
                   leaders=tuple(leaders), alpha=alpha, beta=beta)


def _check_arity(state: DynamicsState, topo: DynamicsTopology):
    if topo.n != len(state.opinions) or len(topo.conflicting) != len(state.opinions):
        raise ValueError("topology/state arity: collaborator sets do not match agent count")


def _averaging_update(values: np.ndarray, sets, gamma: float) -> np.ndarray:
    out = values.copy()
    for i, collab in enumerate(sets):
        m = len(collab)
        if m:
            out[i] = (1.0 - m * gamma) * values[i] + gamma * sum(values[j] for j in collab)
    return out


def _contrarian_update(values: np.ndarray, sets, gamma: float) -> np.ndarray:
    out = values.copy()
    for i, collab in enumerate(sets):
        m = len(collab)
        if m:
            out[i] = (1.0 + m * gamma) * values[i] - gamma * sum(values[j] for j in collab)
    return out


def step_supportive(state: DynamicsState, topo: DynamicsTopology) -> DynamicsState:
    """Average opinions and beliefs toward each agent's supportive collaborators."""
    _check_arity(state, topo)
    alpha, beta = topo.step_sizes()
    return DynamicsState(
        opinions=_averaging_update(state.opinions, topo.supportive, alpha),
        beliefs=_averaging_update(state.beliefs, topo.supportive, beta),
        step=state.step + 1,
    )


def step_conflicting(state: DynamicsState, topo: DynamicsTopology) -> DynamicsState:
    """Average opinions toward conflicting collaborators but push beliefs apart."""
    _check_arity(state, topo)
    alpha, beta = topo.step_sizes()
    return DynamicsState(
        opinions=_averaging_update(state.opinions, topo.conflicting, alpha),
        beliefs=_contrarian_update(state.beliefs, topo.conflicting, beta),
        step=state.step + 1,
    )


def _leader_collaborators(n: int, leaders: Sequence[int]) -> list[tuple[int, ...]]:
    leader_set = set(leaders)
    sets = []
    for i in range(n):
        if i in leader_set:
            sets.append(tuple(j for j in leaders if j != i))
        else:
            sets.append(tuple(leaders))
    return sets


def step_leader_follow(
    state: DynamicsState, leaders: Sequence[int], topo: DynamicsTopology
) -> DynamicsState:
    """Followers average toward the leaders; leaders toward the other leaders.

    A single leader has no collaborators and is a fixed point.
    """
    _check_arity(state, topo)
    if not leaders:
        raise ValueError("no leaders")
    n = len(state.opinions)
    if not all(0 <= j < n for j in leaders):
        raise ValueError("leader index out of range")
    alpha, beta = topo.step_sizes()
    sets = _leader_collaborators(n, leaders)
    return DynamicsState(
        opinions=_averaging_update(state.opinions, sets, alpha),
        beliefs=_averaging_update(state.beliefs, sets, beta),
        step=state.step + 1,
    )


# ---------------------------------------------------------------------------
# increment identities (checked against the frozen step-k collaborator mean)

def averaging_increments(values: np.ndarray, sets, gamma: float):
    """Squared-distance increments for the averaging update.

    Returns (actual, predicted, dist_sq) arrays; entries are NaN for agents
    with no collaborators. predicted = [(1 - g*m)^2 - 1] * dist_sq.
    """
    values = np.asarray(values, dtype=float)
    new = _averaging_update(values, sets, gamma)
    actual = np.full(len(values), np.nan)
    predicted = np.full(len(values), np.nan)
    dist_sq = np.full(len(values), np.nan)
    for i, collab in enumerate(sets):
        m = len(collab)
        if not m:
            continue
        mean = sum(values[j] for j in collab) / m
        d2 = (values[i] - mean) ** 2
        actual[i] = (new[i] - mean) ** 2 - d2
        predicted[i] = ((1.0 - gamma * m) ** 2 - 1.0) * d2
        dist_sq[i] = d2
    return actual, predicted, dist_sq


def contrarian_increments(values: np.ndarray, sets, gamma: float):
    """Squared-distance increments for the belief-repulsion update.

    predicted = [(1 + g*m)^2 - 1] * dist_sq, which is nonnegative.
    """
    values = np.asarray(values, dtype=float)
    new = _contrarian_update(values, sets, gamma)
    actual = np.full(len(values), np.nan)
    predicted = np.full(len(values), np.nan)
    dist_sq = np.full(len(values), np.nan)
    for i, collab in enumerate(sets):
        m = len(collab)
        if not m:
            continue
        mean = sum(values[j] for j in collab) / m
        d2 = (values[i] - mean) ** 2
        actual[i] = (new[i] - mean) ** 2 - d2
        predicted[i] = ((1.0 + gamma * m) ** 2 - 1.0) * d2
        dist_sq[i] = d2
    return actual, predicted, dist_sq


def leader_increments(values: np.ndarray, leaders: Sequence[int], gamma: float):
    """First-power distance increments toward the (frozen) leader average.

    For agent i with m collaborators (m = |leaders| for followers, |leaders|-1
    for leaders), predicted = (|1/m - g| - 1/m) * |sum_collab - m * v_i|.
    """
    values = np.asarray(values, dtype=float)
    sets = _leader_collaborators(len(values), leaders)
    new = _averaging_update(values, sets, gamma)
    actual = np.full(len(values), np.nan)
    predicted = np.full(len(values), np.nan)
    for i, collab in enumerate(sets):
        m = len(collab)
        if not m:
            continue
        total = sum(values[j] for j in collab)
        mean = total / m
        actual[i] = abs(mean - new[i]) - abs(mean - values[i])
        predicted[i] = (abs(1.0 / m - gamma) - 1.0 / m) * abs(total - m * values[i])
    return actual, predicted


# ---------------------------------------------------------------------------
# trajectory runner

@dataclass
class DynamicsResult:
    trace: list[DynamicsState]
    converged: bool
    reason: str
    marginal: bool
    mode: str

    @property
    def final(self) -> DynamicsState:
        return self.trace[-1]

    @property
    def steps(self) -> int:
        return self.trace[-1].step


def _spread(vec: np.ndarray) -> float:
    return float(vec.max() - vec.min())


def _is_marginal_tie(topo: DynamicsTopology) -> bool:
    """True for the exact tie case: all-pairs sets with step size * n == 2.

    The deviation map is then a pure reflection (period-2 oscillation with
    constant distances), which is counted as converged in distance and
    flagged instead of being run to the step budget.
    """
    n = topo.n
    alpha, beta = topo.step_sizes()
    all_pairs = all(
        set(s) == set(range(n)) - {i} for i, s in enumerate(topo.supportive)
    )
    return (
        all_pairs
        and abs(alpha * n - 2.0) < 1e-12
        and abs(beta * n - 2.0) < 1e-12
    )


def run_dynamics(
    initial: DynamicsState,
    topo: DynamicsTopology,
    mode: str,
    tol: float = DEFAULT_TOL,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> DynamicsResult:
    """Iterate the chosen step rule until consensus, divergence, or budget.

    Consensus: max pairwise opinion gap and belief gap both below tol.
    Divergence: belief spread strictly increasing for DIVERGENCE_WINDOW steps.
    The all-pairs tie case (see _is_marginal_tie) is verified to oscillate
    with period 2 and reported converged with the marginal flag.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    _check_arity(initial, topo)

    if mode == "supportive":
        advance = lambda s: step_supportive(s, topo)
    elif mode == "conflicting":
        advance = lambda s: step_conflicting(s, topo)
    elif mode == "leader":
        if not topo.leaders:
            raise ValueError("no leaders")
        advance = lambda s: step_leader_follow(s, topo.leaders, topo)
    else:
        raise ValueError(f"unknown dynamics mode: {mode!r}")

    if mode == "supportive" and _is_marginal_tie(topo):
        s1 = advance(initial)
        s2 = advance(s1)
        period_two = np.allclose(s2.opinions, initial.opinions, rtol=0, atol=1e-12) and \
            np.allclose(s2.beliefs, initial.beliefs, rtol=0, atol=1e-12)
        if period_two:
            return DynamicsResult(
                trace=[initial, s1, s2],
                converged=True,
                reason=REASON_MARGINAL,
                marginal=True,
                mode=mode,
            )

    trace = [initial]
    state = initial
    grow_streak = 0
    prev_bspread = _spread(state.beliefs)
    for _ in range(max_steps):
        if _spread(state.opinions) < tol and _spread(state.beliefs) < tol:
            return DynamicsResult(trace, True, REASON_CONSENSUS, False, mode)
        state = advance(state)
        trace.append(state)
        bspread = _spread(state.beliefs)
        grow_streak = grow_streak + 1 if bspread > prev_bspread else 0
        prev_bspread = bspread
        if grow_streak >= DIVERGENCE_WINDOW:
            return DynamicsResult(trace, False, REASON_DIVERGENCE, False, mode)
    if _spread(state.opinions) < tol and _spread(state.beliefs) < tol:
        return DynamicsResult(trace, True, REASON_CONSENSUS, False, mode)
    return DynamicsResult(trace, False, REASON_BUDGET, False, mode)


def collaborator_sets(topo: DynamicsTopology, mode: str):
    if mode == "supportive":
        return topo.supportive
    if mode == "conflicting":
        return topo.conflicting
    if mode == "leader":
        return _leader_collaborators(topo.n, topo.leaders)
    raise ValueError(f"unknown dynamics mode: {mode!r}")


def trace_to_csv(result: DynamicsResult, topo: DynamicsTopology, out: IO[str]):
    """Write the trajectory as CSV with per-agent distances to collaborator means."""
    sets = collaborator_sets(topo, result.mode)
    writer = csv.writer(out)
    writer.writerow(
        ["step", "agent_id", "opinion", "belief", "dist_to_mean_opinion", "dist_to_mean_belief"]
    )
    for state in result.trace:
        for i in range(len(state.opinions)):
            if sets[i]:
                om = sum(state.opinions[j] for j in sets[i]) / len(sets[i])
                bm = sum(state.beliefs[j] for j in sets[i]) / len(sets[i])
                od = repr(float(abs(state.opinions[i] - om)))
                bd = repr(float(abs(state.beliefs[i] - bm)))
            else:
                od = bd = ""
            writer.writerow(
                [state.step, i, repr(float(state.opinions[i])), repr(float(state.beliefs[i])), od, bd]
            )
