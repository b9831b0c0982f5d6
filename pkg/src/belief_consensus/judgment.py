"""Consensus judgment: belief-calibrated three-state verdict and Byzantine baseline.

The dominant group A^s holds the most frequent canonical answer; all other
agents form the conflict group A^c. The verdict combines the dominant-group
proportion p_s with the dominant-group belief share p_b:

    Full     iff p_s > 2/3 and p_b > 0.8
    Partial  iff p_s >= 2/n and p_b > 0.5 (and not Full)
    None     otherwise

The Byzantine baseline uses p_s > 2/3 alone, ignoring beliefs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from belief_consensus.core import Opinion, modal_answer

FULL = "Full"
PARTIAL = "Partial"
NONE = "None"

FULL_PS_THRESHOLD = 2.0 / 3.0
FULL_PB_THRESHOLD = 0.8
PARTIAL_PB_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConsensusVerdict:
    state: str
    p_s: float
    p_b: float
    dominant_answer: str
    dominant_members: tuple[str, ...]
    conflict_members: tuple[str, ...]


def _split_dominant(opinions: Sequence[Opinion]):
    answer = modal_answer(opinions)
    dominant = [op for op in opinions if op.answer == answer]
    conflict = [op for op in opinions if op.answer != answer]
    return answer, dominant, conflict


def judge_consensus(opinions: Sequence[Opinion], n: int) -> ConsensusVerdict:
    """Classify the system state from one round's opinions."""
    if not opinions:
        raise ValueError("no opinions to judge")
    if len(opinions) != n:
        raise ValueError(f"expected {n} opinions, got {len(opinions)}")
    answer, dominant, conflict = _split_dominant(opinions)
    p_s = len(dominant) / n
    support = sum(op.belief for op in dominant)
    dissent = sum(op.belief for op in conflict)
    p_b = 1.0 if not conflict else support / (support + dissent)
    if p_s > FULL_PS_THRESHOLD and p_b > FULL_PB_THRESHOLD:
        state = FULL
    elif p_s >= 2.0 / n and p_b > PARTIAL_PB_THRESHOLD:
        state = PARTIAL
    else:
        state = NONE
    return ConsensusVerdict(
        state=state,
        p_s=p_s,
        p_b=p_b,
        dominant_answer=answer,
        dominant_members=tuple(op.agent_id for op in dominant),
        conflict_members=tuple(op.agent_id for op in conflict),
    )


def judge_byzantine(opinions: Sequence[Opinion], n: int) -> tuple[bool, float]:
    """Baseline: consensus iff strictly more than 2/3 of agents share one answer."""
    if not opinions:
        raise ValueError("no opinions to judge")
    if len(opinions) != n:
        raise ValueError(f"expected {n} opinions, got {len(opinions)}")
    _, dominant, _ = _split_dominant(opinions)
    p_s = len(dominant) / n
    return p_s > FULL_PS_THRESHOLD, p_s
