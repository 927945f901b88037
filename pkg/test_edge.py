import pytest

from adaptive import BlockOutcome
from core import ConditioningFeatures, ProbDist, Transcript, Vocabulary
from edge import (
    DraftBlock,
    DraftPolicy,
    SessionState,
    commit_local,
    draft_block,
    extract_features,
    resync,
)
from errors import EscalatedBlockError, InconsistentOutcomeError, TerminatedError
from models import TableModel, ngram_fit
from verifier import VerificationOutcome

FEATURES = ConditioningFeatures((0.0, 1.0), "u1")
VOCAB = Vocabulary(10, eos=9)


def state(**kwargs):
    return SessionState(features=FEATURES, eos=VOCAB.eos, **kwargs)


def one_hot_chain(tokens):
    table = TableModel(VOCAB)
    for i, token in enumerate(tokens):
        table.set(tuple(tokens[:i]), "u1", ProbDist.one_hot(VOCAB.size, token))
    return table


class TestDraftBlock:
    def test_one_hot_model_drafts_its_argmaxes_with_zero_entropy(self):
        block = draft_block(state(), one_hot_chain([4, 2, 7, 1, 3]), 5)
        assert block.tokens == (4, 2, 7, 1, 3)
        assert block.entropies == (0.0,) * 5

    def test_stops_at_eos(self):
        block = draft_block(state(), one_hot_chain([4, 2, 9, 1, 3]), 5)
        assert block.tokens == (4, 2, 9)
        assert len(block) == 3

    def test_respects_max_tokens(self):
        s = state(transcript=Transcript((4, 2)), max_tokens=3)
        block = draft_block(s, one_hot_chain([4, 2, 7, 1]), 5)
        assert block.tokens == (7,)

    def test_fitted_bigram_greedy_next_token(self):
        vocab = Vocabulary(2, eos=1)
        model = ngram_fit([Transcript((0, 1, 0, 1, 0))], order=2, alpha=1.0, vocab=vocab)
        s = SessionState(features=FEATURES, eos=1, prompt=(0,), max_tokens=8)
        assert draft_block(s, model, 1).tokens == (1,)

    def test_terminated_state_raises(self):
        with pytest.raises(TerminatedError):
            draft_block(state(transcript=Transcript((9,), terminated=True)), one_hot_chain([1]), 3)

    def test_sampling_is_reproducible_per_seed(self):
        uniform = TableModel(VOCAB)
        policy = DraftPolicy(greedy=False, temperature=1.0)
        a = draft_block(state(seed=3), uniform, 7, policy)
        b = draft_block(state(seed=3), uniform, 7, policy)
        assert a.tokens == b.tokens

    def test_sampling_streams_differ_across_utterances(self):
        uniform = TableModel(VOCAB)
        policy = DraftPolicy(greedy=False, temperature=1.0)
        drafts = {
            draft_block(SessionState(features=ConditioningFeatures((0.0,), f"u{i}"), eos=VOCAB.eos, seed=3),
                        uniform, 7, policy).tokens
            for i in range(20)
        }
        assert len(drafts) > 1


class TestCommitLocal:
    def test_append(self):
        s = commit_local(state(), DraftBlock(0, (5, 7), (0.1, 0.2)))
        assert s.transcript.tokens == (5, 7)
        assert s.controller.last_outcome == BlockOutcome.LOCAL_COMMIT

    def test_eos_terminates(self):
        s = commit_local(state(), DraftBlock(0, (5, 9), (0.1, 0.2)))
        assert s.transcript.terminated

    def test_two_commits_count_all_drafted(self):
        s = commit_local(state(), DraftBlock(0, (1, 2, 3, 4, 5), (0.0,) * 5))
        s = commit_local(s, DraftBlock(5, (6, 7, 8), (0.0,) * 3))
        assert len(s.transcript) == 8
        assert s.counters.total_drafted == 8
        assert s.counters.transmitted == 0

    def test_escalated_block_refused(self):
        with pytest.raises(EscalatedBlockError):
            commit_local(state(), DraftBlock(0, (1,), (0.0,)).escalate())


class TestResync:
    block = DraftBlock(0, (1, 2, 3), (2.0, 2.0, 2.0), escalated=True)

    def test_full_acceptance(self):
        s = resync(state(), self.block, VerificationOutcome(3))
        assert s.transcript.tokens == (1, 2, 3)
        assert s.controller.last_outcome == BlockOutcome.FULLY_ACCEPTED

    def test_correction_discards_suffix(self):
        s = resync(state(), self.block, VerificationOutcome(1, 6))
        assert s.transcript.tokens == (1, 6)
        assert s.controller.last_outcome == BlockOutcome.CORRECTED
        assert s.counters.total_drafted == 3
        assert s.counters.transmitted == 3

    def test_immediate_rejection(self):
        block = DraftBlock(0, (1,), (2.0,), escalated=True)
        s = resync(state(), block, VerificationOutcome(0, 4))
        assert s.transcript.tokens == (4,)

    def test_eos_correction_terminates(self):
        s = resync(state(), self.block, VerificationOutcome(2, 9))
        assert s.transcript.terminated

    def test_inconsistent_outcome_raises(self):
        with pytest.raises(InconsistentOutcomeError):
            resync(state(), self.block, VerificationOutcome(1))


def test_feature_extraction_is_deterministic_and_sized():
    a = extract_features(b"\x00\x01waveform", 8, "u1")
    b = extract_features(b"\x00\x01waveform", 8, "u1")
    assert a == b
    assert a.dim == 8
    assert extract_features(b"other", 8, "u1") != a
