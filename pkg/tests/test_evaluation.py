import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phtsum.evaluation import (GoldAttention, SampleEvaluation,
                               attention_similarity, evaluate_records,
                               format_report, gold_attention, lcs_length,
                               render_figures, rouge_l, rouge_n)


def brute_force_rouge_n(cand, ref, n):
    """Independent clipped n-gram overlap computed with nested loops."""
    cand = [t.lower() for t in cand.split()]
    ref = [t.lower() for t in ref.split()]
    cg = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
    rg = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
    overlap = sum(min(c, rg.get(g, 0)) for g, c in cg.items())
    p = overlap / sum(cg.values()) if cg else 0.0
    r = overlap / sum(rg.values()) if rg else 0.0
    return p, r


def brute_force_lcs(a, b):
    """Exponential subsequence enumeration over the shorter string."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    best = 0
    for r in range(len(short), 0, -1):
        for combo in itertools.combinations(short, r):
            it = iter(long_)
            if all(tok in it for tok in combo):
                return r
    return best


class TestRougeN:
    def test_identical(self):
        s = rouge_n("the cat sat", "the cat sat", 1)
        assert s.precision == s.recall == s.f1 == 1.0

    def test_disjoint(self):
        s = rouge_n("a b c", "x y z", 1)
        assert s.f1 == 0.0

    def test_hand_f1(self):
        # 4-token candidate, 4-token reference, 4 shared unigrams minus one:
        # P = R = 0.8 exactly
        s = rouge_n("a b c d e", "a b c d f", 1)
        assert s.f1 == pytest.approx(0.8)

    def test_clipping(self):
        # candidate repeats "the" 4x but the reference has it twice
        s = rouge_n("the the the the", "the cat the mat", 1)
        assert s.precision == pytest.approx(0.5)
        assert s.recall == pytest.approx(0.5)

    def test_bigram_hand(self):
        s = rouge_n("a b c", "a b d", 2)
        assert s.precision == pytest.approx(0.5)
        assert s.recall == pytest.approx(0.5)

    def test_case_folding(self):
        assert rouge_n("The Cat", "the cat", 1).f1 == 1.0

    def test_empty_candidate(self):
        s = rouge_n("", "a b", 1)
        assert s.precision == 0.0 and s.recall == 0.0 and s.f1 == 0.0

    def test_short_reference_degenerate(self):
        s = rouge_n("a b", "a", 2)
        assert s.degenerate and s.f1 == 0.0

    def test_unsupported_order(self):
        with pytest.raises(ValueError, match="n in"):
            rouge_n("a", "a", 3)

    def test_token_list_inputs(self):
        assert rouge_n(["a", "b"], ["a", "b"], 1).f1 == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        alphabet = list("abcdef")
        for _ in range(300):
            cand = " ".join(rng.choice(alphabet, size=rng.integers(0, 10)))
            ref = " ".join(rng.choice(alphabet, size=rng.integers(2, 10)))
            for n in (1, 2):
                s = rouge_n(cand, ref, n)
                p, r = brute_force_rouge_n(cand, ref, n)
                assert s.precision == pytest.approx(p, abs=1e-15)
                assert s.recall == pytest.approx(r, abs=1e-15)


class TestLcs:
    def test_hand_value(self):
        assert lcs_length(list("abcde"), list("ace")) == 3

    def test_known_pair(self):
        # classic: "abcbdab" vs "bdcaba" has LCS length 4
        assert lcs_length(list("abcbdab"), list("bdcaba")) == 4

    def test_short_crossing(self):
        assert lcs_length(["a", "b"], ["b", "a"]) == 1

    def test_fixture_length_two(self):
        assert lcs_length(["x", "a", "y", "b"], ["a", "b", "z"]) == 2

    def test_empty(self):
        assert lcs_length([], ["a"]) == 0
        assert lcs_length(["a"], []) == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        alphabet = list("abc")
        for _ in range(200):
            a = list(rng.choice(alphabet, size=rng.integers(0, 8)))
            b = list(rng.choice(alphabet, size=rng.integers(0, 8)))
            assert lcs_length(a, b) == brute_force_lcs(a, b)

    @given(st.lists(st.sampled_from("ab"), max_size=10),
           st.lists(st.sampled_from("ab"), max_size=10))
    @settings(max_examples=80, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        n = lcs_length(a, b)
        assert n == lcs_length(b, a)
        assert 0 <= n <= min(len(a), len(b))


class TestRougeL:
    def test_identical(self):
        assert rouge_l("a b c", "a b c").f1 == 1.0

    def test_hand_value(self):
        # LCS("the cat sat", "the dog sat") = 2 -> P = R = 2/3
        s = rouge_l("the cat sat", "the dog sat")
        assert s.precision == pytest.approx(2 / 3)
        assert s.f1 == pytest.approx(2 / 3)

    def test_subsequence_not_substring(self):
        s = rouge_l("a x b y c", "a b c")
        assert s.recall == 1.0
        assert s.precision == pytest.approx(3 / 5)

    def test_empty_degenerate(self):
        assert rouge_l("", "a").degenerate
        assert rouge_l("a", "").degenerate


class TestGoldAttention:
    def test_is_distribution(self):
        gold = gold_attention("cats purr", ["cats purr loudly", "dogs bark"])
        assert gold.values.shape == (2,)
        assert abs(gold.values.sum() - 1.0) < 1e-12
        assert not gold.degenerate

    def test_matching_paragraph_dominates(self):
        gold = gold_attention("cats purr", ["cats purr loudly", "dogs bark"])
        assert gold.values[0] > gold.values[1]

    def test_disjoint_summary_uniform_degenerate(self):
        gold = gold_attention("zeta omega", ["cats purr", "dogs bark"])
        assert gold.degenerate
        assert np.allclose(gold.values, 0.5)

    def test_identical_paragraphs_equal_weight(self):
        gold = gold_attention("cats purr", ["cats purr", "cats purr"])
        assert gold.values[0] == pytest.approx(gold.values[1])

    def test_corpus_idf_downweights_common_terms(self):
        # "shared" appears in every idf doc, "rare" in one; a paragraph
        # matching via the rare term beats one matching via the common term
        idf_docs = ["shared rare", "shared alpha", "shared beta", "shared gamma"]
        gold = gold_attention("rare shared", ["rare word", "shared word"],
                              corpus_idf_docs=idf_docs)
        assert gold.values[0] > gold.values[1]

    def test_empty_paragraphs_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            gold_attention("a", ["", ""])

    def test_hand_computed_single_term(self):
        # one shared term per paragraph, same tf everywhere: cosines are
        # proportional to the shared term's squared idf over equal norms
        gold = gold_attention("a b", ["a", "b"])
        assert np.allclose(gold.values, 0.5)


class TestAttentionSimilarity:
    def test_identical_is_one(self):
        v = np.array([0.2, 0.8])
        assert attention_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        assert attention_similarity(np.array([1.0, 0.0]),
                                    np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_hand_value(self):
        got = attention_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert got == pytest.approx(1 / math.sqrt(2))

    def test_accepts_gold_wrapper(self):
        gold = GoldAttention(values=np.array([0.5, 0.5]))
        assert attention_similarity(np.array([0.5, 0.5]), gold) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            attention_similarity(np.ones(2), np.ones(3))

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero vector"):
            attention_similarity(np.zeros(2), np.ones(2))


class TestReport:
    def make_evals(self):
        records = [
            {"id": "s1", "summary": "cats purr loudly",
             "eta_y": [0.7, 0.3], "kept_paragraphs": [0, 1]},
            {"id": "s2", "summary": "dogs bark"},
        ]
        references = {
            "s1": {"summary": "cats purr loudly",
                   "paragraphs": ["cats purr loudly", "dogs bark"]},
            "s2": {"summary": "dogs bark often", "paragraphs": ["dogs bark"]},
        }
        return evaluate_records(records, references)

    def test_evaluate_records(self):
        evals = self.make_evals()
        assert evals[0].rouge1.f1 == 1.0
        assert evals[0].attention_cosine is not None
        assert evals[1].attention_cosine is None
        assert 0 < evals[1].rouge1.f1 < 1

    def test_missing_reference(self):
        with pytest.raises(KeyError, match="no reference"):
            evaluate_records([{"id": "x", "summary": "a"}], {})

    def test_title_prepended_to_texts(self):
        records = [{"id": "s", "summary": "cats", "eta_y": [0.5, 0.5],
                    "prepend_title": True, "kept_paragraphs": [0, 1]}]
        refs = {"s": {"summary": "cats", "title": "cats",
                      "paragraphs": ["cats purr"]}}
        evals = evaluate_records(records, refs)
        assert evals[0].attention_cosine is not None

    def test_length_mismatch_skips_attention(self):
        records = [{"id": "s", "summary": "cats", "eta_y": [0.5, 0.3, 0.2],
                    "kept_paragraphs": [0, 1, 2]}]
        refs = {"s": {"summary": "cats", "paragraphs": ["a", "b"]}}
        evals = evaluate_records(records, refs)
        assert evals[0].attention_cosine is None

    def test_format_report_shape(self):
        report = format_report(self.make_evals())
        lines = report.strip().splitlines()
        assert lines[0].split("\t") == ["id", "rouge1_f1", "rouge2_f1",
                                        "rougel_f1", "attention_cosine"]
        assert len(lines) == 4  # header + 2 samples + MEAN
        assert lines[-1].startswith("MEAN\t")
        assert lines[2].endswith("\tNA")

    def test_format_report_mean_value(self):
        evals = self.make_evals()
        report = format_report(evals)
        mean_r1 = float(report.strip().splitlines()[-1].split("\t")[1])
        assert mean_r1 == pytest.approx(
            np.mean([e.rouge1.f1 for e in evals]), abs=1e-6)

    def test_empty_report(self):
        assert format_report([]) == ("id\trouge1_f1\trouge2_f1\trougel_f1"
                                     "\tattention_cosine\n")

    def test_render_figures(self, tmp_path):
        paths = render_figures(self.make_evals(), tmp_path)
        assert (tmp_path / "rouge_f1.png").exists()
        assert (tmp_path / "attention_cosine.png").exists()
        assert len(paths) == 2
        for p in paths:
            with open(p, "rb") as f:
                assert f.read(8) == b"\x89PNG\r\n\x1a\n"
