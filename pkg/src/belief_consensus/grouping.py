"""Opinion grouping: keyword tf-idf vectors, seeded k-means, group entropy.

Agents are clustered by the keyword distribution of their opinion text
(reasoning plus answer). Clustering is deterministic for a fixed
(vectors, k, seed) and permutation-equivariant: centroids are seeded from
the lexicographically sorted set of distinct vectors, so reordering agents
only relabels groups.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from belief_consensus.core import Opinion, modal_answer

_TOKEN_CLEAN = re.compile(r"[^\w\s]+")

KMEANS_MAX_ITER = 100
KMEANS_SHIFT_TOL = 1e-6
KMEANS_N_INIT = 10


@dataclass(frozen=True)
class OpinionGroup:
    group_id: int
    members: tuple[str, ...]
    entropy: float
    modal_answer: str


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace. No stemming, no stop list."""
    return _TOKEN_CLEAN.sub(" ", text.lower()).split()


def vectorize(texts: Sequence[str]) -> np.ndarray:
    """Per-document L2-normalized tf-idf vectors over the corpus vocabulary.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1 (smoothed); tf is the raw in-document
    count. Empty documents yield zero vectors.
    """
    if len(texts) == 0:
        raise ValueError("no opinions to vectorize")
    docs = [tokenize(t) for t in texts]
    vocab = sorted({tok for doc in docs for tok in doc})
    index = {tok: j for j, tok in enumerate(vocab)}
    n_docs = len(docs)
    mat = np.zeros((n_docs, max(len(vocab), 1)))
    if vocab:
        df = np.zeros(len(vocab))
        for doc in docs:
            for tok in set(doc):
                df[index[tok]] += 1
        idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
        for i, doc in enumerate(docs):
            for tok in doc:
                mat[i, index[tok]] += 1.0
            mat[i] *= idf
            norm = np.linalg.norm(mat[i])
            if norm > 0:
                mat[i] /= norm
    return mat


def _distinct_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    distinct, inverse, counts = np.unique(
        vectors, axis=0, return_inverse=True, return_counts=True
    )
    return distinct, inverse.ravel(), counts


def _seed_centroids(distinct: np.ndarray, counts: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ over the distinct rows, weighted by multiplicity."""
    weights = counts / counts.sum()
    first = rng.choice(len(distinct), p=weights)
    centroids = [distinct[first]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((distinct - c) ** 2, axis=1) for c in centroids], axis=0
        )
        mass = d2 * counts
        total = mass.sum()
        if total <= 0.0:
            probs = weights
        else:
            probs = mass / total
        centroids.append(distinct[rng.choice(len(distinct), p=probs)])
    return np.array(centroids)


def _lloyd(distinct: np.ndarray, counts: np.ndarray, k_eff: int, rng):
    centroids = _seed_centroids(distinct, counts, k_eff, rng)
    for _ in range(KMEANS_MAX_ITER):
        dists = np.array([np.sum((distinct - c) ** 2, axis=1) for c in centroids])
        assign = np.argmin(dists, axis=0)
        new_centroids = centroids.copy()
        for c in range(k_eff):
            mask = assign == c
            if mask.any():
                new_centroids[c] = np.average(distinct[mask], axis=0, weights=counts[mask])
            else:
                # re-seat an empty cluster on the farthest distinct vector
                far = np.argmax(np.min(dists, axis=0))
                new_centroids[c] = distinct[far]
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < KMEANS_SHIFT_TOL:
            break
    dists = np.array([np.sum((distinct - c) ** 2, axis=1) for c in centroids])
    assign = np.argmin(dists, axis=0)
    inertia = float(np.sum(np.min(dists, axis=0) * counts))
    return assign, inertia


def cluster_opinions(vectors: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Lloyd k-means with k-means++ seeding; returns a label per row.

    Vectors are expected L2-normalized, making squared Euclidean distance
    cosine-equivalent. Seeding restarts KMEANS_N_INIT times from the seed
    and the lowest-inertia run wins. If fewer than k distinct vectors
    exist, the effective k is reduced to that count. Labels are renumbered
    by first appearance.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if vectors.ndim != 2 or len(vectors) == 0:
        raise ValueError("vectors must be a non-empty 2-d array")
    distinct, inverse, counts = _distinct_rows(vectors)
    k_eff = min(k, len(distinct))
    assign = None
    best = math.inf
    for child in np.random.SeedSequence(seed).spawn(KMEANS_N_INIT):
        candidate, inertia = _lloyd(distinct, counts, k_eff, np.random.default_rng(child))
        if inertia < best - 1e-12:
            best = inertia
            assign = candidate
    labels = assign[inverse]
    # renumber by first appearance so labels are stable for a given row order
    remap: dict[int, int] = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        if lab not in remap:
            remap[lab] = len(remap)
        out[i] = remap[lab]
    return out


def group_entropy(beliefs: Sequence[float]) -> float:
    """Information entropy of a group: -sum(b * ln b) over member beliefs."""
    if len(beliefs) == 0:
        raise ValueError("no beliefs")
    total = 0.0
    for b in beliefs:
        if not (0.0 < b <= 1.0):
            raise ValueError(f"invalid probability: {b!r}")
        total -= b * math.log(b)
    return total


def build_groups(opinions: Sequence[Opinion], k: int, seed: int) -> tuple[OpinionGroup, ...]:
    """Cluster opinions into groups and attach entropy and modal answer."""
    texts = [f"{op.reasoning} {op.answer}" for op in opinions]
    labels = cluster_opinions(vectorize(texts), k, seed)
    by_label: dict[int, list[Opinion]] = {}
    for op, lab in zip(opinions, labels):
        by_label.setdefault(int(lab), []).append(op)
    groups = []
    for gid in sorted(by_label):
        members = by_label[gid]
        groups.append(
            OpinionGroup(
                group_id=gid,
                members=tuple(op.agent_id for op in members),
                entropy=group_entropy([op.belief for op in members]),
                modal_answer=modal_answer(members),
            )
        )
    return tuple(groups)
