import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from belief_consensus.core import Opinion
from belief_consensus.grouping import (
    build_groups,
    cluster_opinions,
    group_entropy,
    tokenize,
    vectorize,
)


def partition_of(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return frozenset(frozenset(g) for g in groups.values())


class TestVectorize:
    def test_identical_texts_identical_vectors(self):
        vecs = vectorize(["prime number theory", "prime number theory"])
        assert np.allclose(vecs[0], vecs[1])

    def test_single_document_reduces_to_normalized_tf(self):
        # with one document every idf is ln(2/2) + 1 = 1
        vecs = vectorize(["alpha alpha beta"])
        expected = np.array([2.0, 1.0]) / math.sqrt(5.0)
        assert np.allclose(sorted(vecs[0], reverse=True), sorted(expected, reverse=True))
        assert np.isclose(np.linalg.norm(vecs[0]), 1.0)

    def test_hand_computed_cosine(self):
        # N=2, df(prime)=2 -> idf 1; df(number)=df(factor)=1 -> idf ln(3/2)+1
        vecs = vectorize(["prime number", "prime factor"])
        cosine = float(vecs[0] @ vecs[1])
        assert cosine == pytest.approx(0.3360969272762574, rel=1e-12)

    def test_empty_text_zero_vector(self):
        vecs = vectorize(["alpha beta", ""])
        assert np.allclose(vecs[1], 0.0)

    def test_tokenize_strips_punctuation_and_case(self):
        assert tokenize("The Answer, is: (B)!") == ["the", "answer", "is", "b"]


class TestClusterOpinions:
    def test_identical_vectors_collapse_to_one_group(self):
        vecs = vectorize(["same text here"] * 5)
        labels = cluster_opinions(vecs, 3, seed=7)
        assert set(labels) == {0}

    def test_two_separated_bundles(self):
        texts = (
            ["gyromagnetic ratio planck constant moment"] * 3
            + ["land grants colonial assignment populations"] * 4
        )
        vecs = vectorize(texts)
        labels = cluster_opinions(vecs, 2, seed=11)
        expected = frozenset({frozenset({0, 1, 2}), frozenset({3, 4, 5, 6})})
        assert partition_of(labels) == expected

    def test_separated_bundles_match_exhaustive_two_partition(self):
        # brute-force oracle: the best 2-partition by within-cluster variance
        rng = np.random.default_rng(5)
        base_a = np.array([1.0, 0.0, 0.0, 0.0])
        base_b = np.array([0.0, 0.0, 1.0, 0.0])
        points = []
        for _ in range(3):
            v = base_a + rng.normal(0, 0.02, 4)
            points.append(v / np.linalg.norm(v))
        for _ in range(3):
            v = base_b + rng.normal(0, 0.02, 4)
            points.append(v / np.linalg.norm(v))
        points = np.array(points)

        def sse(index_sets):
            total = 0.0
            for idx in index_sets:
                sub = points[list(idx)]
                total += float(np.sum((sub - sub.mean(axis=0)) ** 2))
            return total

        best = None
        best_sse = math.inf
        n = len(points)
        for mask in range(1, 2 ** (n - 1)):
            left = frozenset(i for i in range(n) if (mask >> i) & 1)
            right = frozenset(range(n)) - left
            if not left or not right:
                continue
            cost = sse([left, right])
            if cost < best_sse:
                best_sse = cost
                best = frozenset({left, right})

        labels = cluster_opinions(points, 2, seed=3)
        assert partition_of(labels) == best

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(0)
        vecs = rng.uniform(0, 1, size=(9, 6))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        a = cluster_opinions(vecs, 3, seed=42)
        b = cluster_opinions(vecs, 3, seed=42)
        assert np.array_equal(a, b)

    def test_k_reduced_to_distinct_count(self):
        vecs = vectorize(["one two", "one two", "three four"])
        labels = cluster_opinions(vecs, 3, seed=1)
        assert len(set(labels)) == 2

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            cluster_opinions(np.ones((2, 2)), 0, seed=1)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1), st.permutations(list(range(8))))
    @settings(max_examples=25, deadline=None)
    def test_permutation_equivariance(self, seed, perm):
        rng = np.random.default_rng(seed)
        centers = np.eye(3)
        vecs = []
        for i in range(8):
            v = centers[i % 3] + rng.normal(0, 0.05, 3)
            vecs.append(v / np.linalg.norm(v))
        vecs = np.array(vecs)
        labels = cluster_opinions(vecs, 3, seed=seed)
        permuted = cluster_opinions(vecs[perm], 3, seed=seed)
        original_partition = partition_of(labels)
        # map permuted indices back to the original ids before comparing
        back = frozenset(
            frozenset(perm[i] for i in grp) for grp in partition_of(permuted)
        )
        assert back == original_partition


class TestGroupEntropy:
    def test_certain_belief_zero_entropy(self):
        assert group_entropy([1.0]) == 0.0

    def test_two_halves(self):
        assert group_entropy([0.5, 0.5]) == pytest.approx(0.6931, abs=1e-4)

    def test_single_half(self):
        assert group_entropy([0.5]) == pytest.approx(0.3466, abs=1e-4)

    def test_invalid_belief(self):
        with pytest.raises(ValueError):
            group_entropy([0.5, 0.0])
        with pytest.raises(ValueError):
            group_entropy([])

    @given(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=10),
           st.integers(min_value=1, max_value=9))
    def test_additive_over_members(self, beliefs, cut):
        cut = min(cut, len(beliefs) - 1)
        whole = group_entropy(beliefs)
        parts = group_entropy(beliefs[:cut]) + group_entropy(beliefs[cut:])
        assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)


class TestBuildGroups:
    def _opinions(self):
        return [
            Opinion("a1", "gyromagnetic ratio planck constant", "B", 0.4),
            Opinion("a2", "gyromagnetic ratio planck constant", "B", 0.6),
            Opinion("a3", "land grants colonial assignment", "C", 0.5),
            Opinion("a4", "land grants colonial assignment", "C", 0.7),
        ]

    def test_partition_property(self):
        groups = build_groups(self._opinions(), k=2, seed=9)
        seen = [m for g in groups for m in g.members]
        assert sorted(seen) == ["a1", "a2", "a3", "a4"]

    def test_entropy_matches_recomputation(self):
        ops = self._opinions()
        by_id = {op.agent_id: op for op in ops}
        for g in build_groups(ops, k=2, seed=9):
            expected = group_entropy([by_id[m].belief for m in g.members])
            assert g.entropy == pytest.approx(expected, abs=1e-12)

    def test_modal_answers(self):
        groups = build_groups(self._opinions(), k=2, seed=9)
        by_members = {g.members: g.modal_answer for g in groups}
        assert by_members[("a1", "a2")] == "B"
        assert by_members[("a3", "a4")] == "C"
