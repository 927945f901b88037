import math
import random

import pytest

from errors import ConfigError, EmptyCandidateError, EmptyReferenceError, InvariantViolation
from evalmetrics import (
    Metric,
    ScoredPair,
    bleu,
    corpus_score,
    gap_closure,
    lcs_length,
    load_pairs,
    relative_improvement,
    rouge_l,
    score_all,
    scores_csv,
)

A, B, C, D = 0, 1, 2, 3

TOY_PAIRS = [
    ([A, B, C, D], [[A, B, C, D]]),
    ([A, B, C], [[A, B, D], [B, C, A, D]]),
    ([D, D, D, D], [[D, A, B]]),
    ([A], [[A, B, C, D]]),
    ([C, B, A, B, C], [[A, B, C], [C, B, A, C, C, D]]),
]


def lcs_table(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def straight_line_corpus_bleu(pairs, max_n):
    """Second rendition: plain dict counting, written without the shared helpers"""
    matched = [0] * max_n
    proposed = [0] * max_n
    cand_len = ref_len = 0
    for candidate, references in pairs:
        cand_len += len(candidate)
        best = None
        for ref in references:
            key = (abs(len(ref) - len(candidate)), len(ref))
            if best is None or key < best:
                best = key
        ref_len += best[1]
        for n in range(1, max_n + 1):
            cand_counts = {}
            for i in range(len(candidate) - n + 1):
                gram = tuple(candidate[i:i + n])
                cand_counts[gram] = cand_counts.get(gram, 0) + 1
            ceiling = {}
            for ref in references:
                ref_counts = {}
                for i in range(len(ref) - n + 1):
                    gram = tuple(ref[i:i + n])
                    ref_counts[gram] = ref_counts.get(gram, 0) + 1
                for gram, count in ref_counts.items():
                    ceiling[gram] = max(ceiling.get(gram, 0), count)
            pair_matched = pair_proposed = 0
            for gram, count in cand_counts.items():
                pair_matched += min(count, ceiling.get(gram, 0))
                pair_proposed += count
            if pair_matched == 0:
                pair_matched, pair_proposed = 1, pair_proposed + 1
            matched[n - 1] += pair_matched
            proposed[n - 1] += pair_proposed
    logs = [math.log(m / t) for m, t in zip(matched, proposed)]
    score = math.exp(sum(logs) / max_n)
    if cand_len < ref_len:
        score *= math.exp(1 - ref_len / cand_len)
    return min(score, 1.0)


class TestBleu:
    def test_identity(self):
        for n in (1, 2, 3, 4):
            assert bleu(ScoredPair.of([A, B, C, D, A], [A, B, C, D, A]), n) == 1.0

    def test_unigram_precision(self):
        assert bleu(ScoredPair.of([A, B, C], [A, B, D]), 1) == pytest.approx(2 / 3, abs=1e-9)
        assert round(bleu(ScoredPair.of([A, B, C], [A, B, D]), 1), 4) == 0.6667

    def test_brevity_penalty(self):
        assert bleu(ScoredPair.of([A], [A, B, C, D]), 1) == pytest.approx(math.exp(-3), abs=1e-9)

    def test_unigram_permutation_only_pays_brevity(self):
        assert bleu(ScoredPair.of([D, C, B, A], [A, B, C, D]), 1) == 1.0
        assert bleu(ScoredPair.of([C, A], [A, B, C]), 1) == pytest.approx(math.exp(1 - 3 / 2))

    def test_reference_order_is_irrelevant(self):
        refs = [[A, B, D], [B, C, A, D], [C]]
        scores = {bleu(ScoredPair.of([A, B, C], *perm), 4) for perm in
                  [refs, refs[::-1], [refs[1], refs[2], refs[0]]]}
        assert len(scores) == 1

    def test_empty_candidate(self):
        with pytest.raises(EmptyCandidateError):
            bleu(ScoredPair.of([], [A]), 1)

    def test_no_references(self):
        with pytest.raises(EmptyReferenceError):
            ScoredPair.of([A])

    def test_order_out_of_range(self):
        with pytest.raises(InvariantViolation):
            bleu(ScoredPair.of([A], [A]), 5)

    def test_smoothed_zero_order_stays_positive(self):
        score = bleu(ScoredPair.of([A, B, C, D], [D, C, B, A]), 4)
        assert 0.0 < score < 1.0


class TestRougeL:
    def test_identity(self):
        assert rouge_l(ScoredPair.of([A, B, C], [A, B, C])) == 1.0

    def test_hand_computed(self):
        expected = 2.44 * (2 / 3) / (1 + 1.44 * (2 / 3))
        assert rouge_l(ScoredPair.of([A, B, C], [A, C])) == pytest.approx(expected, abs=1e-9)
        assert round(expected, 4) == 0.8299

    def test_disjoint(self):
        assert rouge_l(ScoredPair.of([A, B], [C, D])) == 0.0

    def test_best_reference_wins(self):
        assert rouge_l(ScoredPair.of([A, B, C], [D], [A, B, C])) == 1.0

    def test_empty_reference(self):
        with pytest.raises(EmptyReferenceError):
            rouge_l(ScoredPair.of([A], []))


class TestLcs:
    def test_against_table_oracle(self):
        rng = random.Random(7)
        for _ in range(1000):
            a = [rng.randrange(5) for _ in range(rng.randrange(31))]
            b = [rng.randrange(5) for _ in range(rng.randrange(31))]
            assert lcs_length(a, b) == lcs_table(a, b)


class TestCorpus:
    def test_single_pair_equals_pair_score(self):
        pair = ScoredPair.of([A, B, C], [A, B, D])
        assert corpus_score([pair], Metric.BLEU1) == bleu(pair, 1)
        assert corpus_score([pair], Metric.ROUGE_L) == rouge_l(pair)

    def test_duplicated_pair_pools_to_the_same_score(self):
        pair = ScoredPair.of([C, B, A, B, C], [A, B, C])
        for metric in Metric:
            assert corpus_score([pair, pair], metric) == pytest.approx(corpus_score([pair], metric))

    @pytest.mark.parametrize("max_n,metric", [(1, Metric.BLEU1), (4, Metric.BLEU4)])
    def test_matches_straight_line_oracle(self, max_n, metric):
        pairs = [ScoredPair.of(c, *refs) for c, refs in TOY_PAIRS]
        assert corpus_score(pairs, metric) == pytest.approx(
            straight_line_corpus_bleu(TOY_PAIRS, max_n), abs=1e-9)

    def test_rouge_is_averaged(self):
        pairs = [ScoredPair.of(c, *refs) for c, refs in TOY_PAIRS]
        mean = math.fsum(rouge_l(p) for p in pairs) / len(pairs)
        assert corpus_score(pairs, "rouge_l") == pytest.approx(mean)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCandidateError):
            corpus_score([], Metric.BLEU1)

    def test_all_scores_in_unit_interval(self):
        scores = score_all([ScoredPair.of(c, *refs) for c, refs in TOY_PAIRS])
        assert set(scores) == {"bleu1", "bleu4", "rouge_l"}
        assert all(0.0 <= v <= 1.0 for v in scores.values())


class TestSummaries:
    def test_gap_closure(self):
        assert gap_closure(0.4, 0.7, 0.8) == pytest.approx(0.75)

    def test_no_gap(self):
        with pytest.raises(InvariantViolation):
            gap_closure(0.5, 0.5, 0.5)

    def test_relative_improvement(self):
        assert relative_improvement(0.2, 0.3) == pytest.approx(0.5)

    def test_csv_reports_pinned_parameters(self):
        text = scores_csv({"bleu1": 0.5}, percent=True)
        assert text.splitlines() == [
            "metric,value", "bleu1,50.000000", "rouge_beta,1.2", "bleu_smoothing,add-one on zero-match orders",
        ]


class TestScoringFiles:
    def test_load_pairs_with_alternative_references(self, tmp_path):
        (tmp_path / "cand.txt").write_text("1 2 3\n4\n", encoding="utf-8")
        (tmp_path / "refs.txt").write_text("1 2 3 | 1 2\n4 5\n", encoding="utf-8")
        pairs = load_pairs(tmp_path / "cand.txt", tmp_path / "refs.txt")
        assert len(pairs) == 2
        assert [r.tokens for r in pairs[0].references] == [(1, 2, 3), (1, 2)]

    def test_bad_token_names_the_line(self, tmp_path):
        (tmp_path / "cand.txt").write_text("1 2\n1 x\n", encoding="utf-8")
        (tmp_path / "refs.txt").write_text("1\n1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="cand.txt:2"):
            load_pairs(tmp_path / "cand.txt", tmp_path / "refs.txt")

    def test_line_count_mismatch(self, tmp_path):
        (tmp_path / "cand.txt").write_text("1\n", encoding="utf-8")
        (tmp_path / "refs.txt").write_text("1\n2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_pairs(tmp_path / "cand.txt", tmp_path / "refs.txt")
