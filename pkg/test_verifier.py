import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core import ConditioningFeatures, ProbDist, Transcript, Vocabulary
from errors import ConfigError, EmptyDraftError, InconsistentOutcomeError, TerminatedError
from models import NGramModel, TableModel, ngram_fit
from verifier import (
    AcceptanceConfig,
    OutcomeKind,
    VerificationOutcome,
    rank_of,
    verify_block,
    verify_block_oracle,
)

FEATURES = ConditioningFeatures((0.0,), "u1")


def random_bigram(rng, size):
    vocab = Vocabulary(size, eos=size - 1)
    counts = {(c,): rng.integers(0, 6, size) for c in range(size)}
    return NGramModel(vocab, order=2, alpha=float(rng.uniform(0.05, 1.0)), counts=counts)


class TestRank:
    def test_argmax_has_rank_one(self):
        assert rank_of(ProbDist([0.1, 0.7, 0.2]), 1) == 1

    def test_ties_share_best_rank(self):
        assert rank_of(ProbDist([0.5, 0.5]), 1) == 1

    def test_sort_order(self):
        assert rank_of(ProbDist([0.5, 0.3, 0.2]), 2) == 3


class TestOutcome:
    def test_kinds(self):
        assert VerificationOutcome(3).check(3).kind == OutcomeKind.FULLY_ACCEPTED
        assert VerificationOutcome(1, 4).check(3).kind == OutcomeKind.CORRECTED

    def test_partial_acceptance_needs_a_correction(self):
        with pytest.raises(InconsistentOutcomeError):
            VerificationOutcome(1).check(3)

    def test_full_acceptance_with_correction_is_inconsistent(self):
        with pytest.raises(InconsistentOutcomeError):
            VerificationOutcome(3, 1).check(3)


class TestVerifyBlock:
    def test_rank_equal_to_vocab_accepts_everything(self):
        rng = np.random.default_rng(5)
        model = random_bigram(rng, 6)
        for draft in itertools.product(range(6), repeat=3):
            out = verify_block(model, Transcript((0,)), FEATURES, draft, AcceptanceConfig(6))
            assert out.kind == OutcomeKind.FULLY_ACCEPTED

    def test_rank_one_rejects_non_argmax_first_token(self):
        vocab = Vocabulary(3, eos=2)
        table = TableModel(vocab)
        table.set((), "u1", [0.1, 0.8, 0.1])
        out = verify_block(table, Transcript(), FEATURES, [0, 1], AcceptanceConfig(1))
        assert out == VerificationOutcome(0, 1)

    def test_hand_computed_two_position_block(self):
        vocab = Vocabulary(2, eos=1)
        table = TableModel(vocab)
        table.set((), "u1", [0.6, 0.4])
        table.set((1,), "u1", [0.1, 0.9])
        out = verify_block(table, Transcript(), FEATURES, [1, 0], AcceptanceConfig(1))
        assert out.accepted_count == 0
        assert out.correction == 0

    def test_matching_one_hot_verifier_accepts(self):
        vocab = Vocabulary(4, eos=3)
        table = TableModel(vocab)
        table.set((), "u1", ProbDist.one_hot(4, 2))
        table.set((2,), "u1", ProbDist.one_hot(4, 0))
        out = verify_block(table, Transcript(), FEATURES, [2, 0], AcceptanceConfig(1))
        assert out == VerificationOutcome(2)

    @settings(max_examples=200)
    @given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.data())
    def test_correction_is_a_rank_one_token(self, size, seed, length, data):
        model = random_bigram(np.random.default_rng(seed), size)
        draft = data.draw(st.lists(st.integers(0, size - 1), min_size=length, max_size=length))
        prefix = data.draw(st.lists(st.integers(0, size - 2), max_size=4))
        cfg = AcceptanceConfig(data.draw(st.integers(1, size)))
        out = verify_block(model, Transcript(prefix), FEATURES, draft, cfg)
        if out.correction is not None:
            dist = model.next_dist(tuple(prefix) + tuple(draft[:out.accepted_count]), FEATURES)
            assert rank_of(dist, out.correction) == 1

    @settings(max_examples=200)
    @given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.data())
    def test_accepted_count_grows_with_rank_threshold(self, size, seed, length, data):
        model = random_bigram(np.random.default_rng(seed), size)
        draft = data.draw(st.lists(st.integers(0, size - 1), min_size=length, max_size=length))
        prefix = data.draw(st.lists(st.integers(0, size - 2), max_size=4))
        counts = [verify_block(model, Transcript(prefix), FEATURES, draft, AcceptanceConfig(rank)).accepted_count
                  for rank in range(1, size + 1)]
        assert counts == sorted(counts)
        assert counts[-1] == length

    def test_empty_draft_raises(self):
        model = random_bigram(np.random.default_rng(0), 3)
        with pytest.raises(EmptyDraftError):
            verify_block(model, Transcript(), FEATURES, [], AcceptanceConfig(1))

    def test_terminated_prefix_raises(self):
        model = random_bigram(np.random.default_rng(0), 3)
        with pytest.raises(TerminatedError):
            verify_block(model, Transcript((2,), terminated=True), FEATURES, [0], AcceptanceConfig(1))

    def test_rank_above_vocab_size_rejected(self):
        model = random_bigram(np.random.default_rng(0), 3)
        with pytest.raises(ConfigError):
            verify_block(model, Transcript(), FEATURES, [0], AcceptanceConfig(4))


class TestAgainstSequentialOracle:
    def test_exhaustive_small_vocabulary(self):
        vocab = Vocabulary(3, eos=2)
        corpus = [Transcript((0, 1, 0, 0, 2)), Transcript((1, 1, 0, 2)), Transcript((0, 2))]
        model = ngram_fit(corpus, order=2, alpha=0.5, vocab=vocab)
        for rank in (1, 2, 3):
            cfg = AcceptanceConfig(rank)
            for prefix in [(), (0,), (1,), (0, 1)]:
                for length in (1, 2, 3):
                    for draft in itertools.product(range(3), repeat=length):
                        fast = verify_block(model, Transcript(prefix), FEATURES, draft, cfg)
                        slow = verify_block_oracle(model, Transcript(prefix), FEATURES, draft, cfg)
                        assert fast == slow, (rank, prefix, draft)

    @settings(max_examples=300)
    @given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.data())
    def test_random_models_and_drafts(self, size, seed, length, data):
        rng = np.random.default_rng(seed)
        model = random_bigram(rng, size)
        draft = data.draw(st.lists(st.integers(0, size - 1), min_size=length, max_size=length))
        prefix = data.draw(st.lists(st.integers(0, size - 2), max_size=4))
        cfg = AcceptanceConfig(data.draw(st.integers(1, size)))
        assert (verify_block(model, Transcript(prefix), FEATURES, draft, cfg)
                == verify_block_oracle(model, Transcript(prefix), FEATURES, draft, cfg))

    @pytest.mark.slow
    def test_hundred_thousand_random_cases(self):
        rng = np.random.default_rng(99)
        mismatches = 0
        for case in range(100_000):
            if case % 500 == 0:
                size = int(rng.integers(2, 33))
                model = random_bigram(rng, size)
            draft = rng.integers(0, size, int(rng.integers(1, 8))).tolist()
            prefix = rng.integers(0, size - 1, int(rng.integers(0, 4))).tolist()
            cfg = AcceptanceConfig(int(rng.integers(1, size + 1)))
            fast = verify_block(model, Transcript(prefix), FEATURES, draft, cfg)
            slow = verify_block_oracle(model, Transcript(prefix), FEATURES, draft, cfg)
            mismatches += fast != slow
        assert mismatches == 0
