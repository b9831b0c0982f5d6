"""Shared data model: opinions, scenarios, run configuration, belief math.

Every other module consumes these types. An Opinion is one agent's
(reasoning, answer, belief) triple for a single round; the answer field is
always stored in canonical form so that answer equality is plain byte
equality.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

# Beliefs are plain probabilities, not log-space: answer sentences are short,
# so products cannot meaningfully underflow. The floor keeps them positive.
MIN_BELIEF = 1e-300


def stable_hash(text: str) -> int:
    """Process-independent 32-bit hash, used to derive per-entity RNG seeds."""
    return zlib.crc32(text.encode("utf-8"))


@dataclass(frozen=True)
class Opinion:
    """One agent's output for one round: reasoning text, canonical answer, belief."""

    agent_id: str
    reasoning: str
    answer: str
    belief: float

    def __post_init__(self):
        if not (0.0 < self.belief <= 1.0):
            raise ValueError(f"invalid probability: belief {self.belief!r} outside (0, 1]")
        if not self.answer or not self.answer.strip():
            raise ValueError("unanswerable output: empty canonical answer")


def belief_from_token_probs(probs: Sequence[float]) -> float:
    """Belief of an answer = product of its answer-sentence token probabilities."""
    if len(probs) == 0:
        raise ValueError("no answer tokens")
    out = 1.0
    for p in probs:
        if not (0.0 < p <= 1.0):
            raise ValueError(f"invalid probability: {p!r}")
        out *= p
    return max(out, MIN_BELIEF)


_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")
# Greedy prefix so the *last* "the answer is" in the text wins.
_ANSWER_SENTENCE = re.compile(r".*\bthe answer is\b[:\s]*(.+)$", re.IGNORECASE | re.DOTALL)
_CHOICE = re.compile(r"^\(([A-Za-z0-9]{1,3})\)$")


def canonicalize_answer(raw: str) -> str:
    """Reduce a raw answer (or answer sentence) to its canonical form.

    Strips whitespace runs and the two wrapper forms used by the agent
    prompts: a boxed expression and a parenthesized choice letter, plus the
    "The answer is ..." sentence frame. Case of symbolic content is
    preserved; two answers agree iff their canonical forms are byte-equal.
    """
    if raw is None or not raw.strip():
        raise ValueError("unanswerable output")
    text = " ".join(raw.split())
    boxed = list(_BOXED.finditer(text))
    if boxed:
        text = " ".join(boxed[-1].group(1).split())
    else:
        sentence = _ANSWER_SENTENCE.match(text)
        if sentence:
            tail = sentence.group(1).strip()
            # keep only the first sentence of the tail
            tail = tail.split(". ")[0]
            text = tail.rstrip(".!?").strip()
    choice = _CHOICE.match(text)
    if choice:
        text = choice.group(1)
    if not text:
        raise ValueError("unanswerable output")
    return text


def modal_answer(opinions: Sequence[Opinion]) -> str:
    """Most frequent canonical answer; ties break by belief sum, then lexicographic."""
    if not opinions:
        raise ValueError("no opinions")
    tally: dict[str, list[float]] = {}
    for op in opinions:
        entry = tally.setdefault(op.answer, [0, 0.0])
        entry[0] += 1
        entry[1] += op.belief
    return min(tally.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[0]))[0]


@dataclass(frozen=True)
class ScriptedReply:
    round: int
    answer: str
    reasoning: str
    belief: float


@dataclass(frozen=True)
class AgentScript:
    """Per-agent scripted replies plus an optional fallback rule.

    Fallback rules: "repeat_previous", "adopt:leader", "adopt:supportive",
    "adopt:conflicting", or "adopt:agent:<id>"; adopt rules may carry a
    scripted belief to attach to the adopted answer.
    """

    agent_id: str
    replies: tuple[ScriptedReply, ...]
    fallback: str | None = None
    fallback_belief: float | None = None

    def reply_for(self, round_index: int) -> ScriptedReply | None:
        for reply in self.replies:
            if reply.round == round_index:
                return reply
        return None


@dataclass(frozen=True)
class ScenarioCase:
    """One question with its ground truth and optional per-agent scripts."""

    case_id: str
    question: str
    ground_truth: str
    scripts: Mapping[str, AgentScript] | None = None

    def __post_init__(self):
        if self.scripts:
            missing = [aid for aid, s in self.scripts.items() if s.reply_for(1) is None]
            if missing:
                raise ValueError(
                    f"case {self.case_id!r}: scripted agents missing a round-1 reply: {missing}"
                )


@dataclass(frozen=True)
class RunConfig:
    """Protocol run parameters. Defaults follow the reference experiment setup."""

    n: int = 7
    max_rounds: int = 3
    n_leaders: int = 2
    n_clusters: int = 3
    seed: int = 0
    adversarial_noise: bool = False
    # When set, the least reliable agent also receives supportive delegates
    # alongside conflicting ones (for collaboration-ratio experiments).
    mixed_delegates: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.n_leaders < 1:
            raise ValueError("n_leaders must be at least 1")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")


def _script_from_dict(payload: dict) -> AgentScript:
    replies = tuple(
        ScriptedReply(
            round=int(r["round"]),
            answer=canonicalize_answer(str(r["answer"])),
            reasoning=str(r.get("reasoning", "")),
            belief=float(r["belief"]),
        )
        for r in payload.get("rounds", [])
    )
    fallback = payload.get("fallback")
    fallback_belief = None
    if isinstance(fallback, dict):
        fallback_belief = fallback.get("belief")
        fallback = fallback.get("rule")
    return AgentScript(
        agent_id=str(payload["agent_id"]),
        replies=replies,
        fallback=fallback,
        fallback_belief=None if fallback_belief is None else float(fallback_belief),
    )


def scenarios_from_json(path: str | Path) -> list[ScenarioCase]:
    """Load a scenario dataset: {"cases": [{case_id, question, ground_truth, agents}]}."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    cases = []
    seen = set()
    for entry in payload["cases"]:
        case_id = str(entry["case_id"])
        if case_id in seen:
            raise ValueError(f"duplicate case_id {case_id!r} in dataset")
        seen.add(case_id)
        scripts = None
        if entry.get("agents"):
            scripts = {}
            for agent_payload in entry["agents"]:
                script = _script_from_dict(agent_payload)
                scripts[script.agent_id] = script
        cases.append(
            ScenarioCase(
                case_id=case_id,
                question=str(entry["question"]),
                ground_truth=canonicalize_answer(str(entry["ground_truth"])),
                scripts=scripts,
            )
        )
    return cases
