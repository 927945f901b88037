import pytest

from adaptive import (
    COUNTER_LIMIT,
    AdaptiveState,
    BlockOutcome,
    LengthConfig,
    next_block_length,
    record_outcome,
)
from errors import InvariantViolation

CFG = LengthConfig(3, 5, 7)
OUTCOMES = (BlockOutcome.CORRECTED, BlockOutcome.FULLY_ACCEPTED, BlockOutcome.LOCAL_COMMIT)


def reference_length(history):
    """Written out longhand: first block base, after a correction min, two accepts in a row max"""
    if not history:
        return 5
    if history[-1] == BlockOutcome.CORRECTED:
        return 3
    streak = 0
    for outcome in reversed(history):
        if outcome == BlockOutcome.CORRECTED:
            break
        streak += 1
    return 7 if streak >= 2 else 5


class TestNextBlockLength:
    def test_first_block_uses_base(self):
        assert next_block_length(AdaptiveState(), CFG) == 5

    def test_after_correction_uses_min(self):
        assert next_block_length(AdaptiveState(BlockOutcome.CORRECTED, 0), CFG) == 3

    def test_streak_of_two_uses_max(self):
        assert next_block_length(AdaptiveState(BlockOutcome.FULLY_ACCEPTED, 2), CFG) == 7

    def test_fixed_length_is_constant(self):
        fixed = LengthConfig.fixed(20)
        for state in [AdaptiveState(), AdaptiveState(BlockOutcome.CORRECTED, 0),
                      AdaptiveState(BlockOutcome.LOCAL_COMMIT, 9)]:
            assert next_block_length(state, fixed) == 20

    def test_bad_ordering_rejected(self):
        with pytest.raises(InvariantViolation):
            LengthConfig(5, 3, 7)


class TestRecordOutcome:
    def test_accept_increments(self):
        state = record_outcome(AdaptiveState(BlockOutcome.FULLY_ACCEPTED, 1), BlockOutcome.FULLY_ACCEPTED)
        assert state.consecutive_accepts == 2

    def test_correction_resets(self):
        state = record_outcome(AdaptiveState(BlockOutcome.FULLY_ACCEPTED, 5), BlockOutcome.CORRECTED)
        assert state.consecutive_accepts == 0

    def test_local_commit_counts_as_accept(self):
        state = record_outcome(AdaptiveState(), BlockOutcome.LOCAL_COMMIT)
        assert state.consecutive_accepts == 1

    def test_counter_saturates(self):
        state = record_outcome(AdaptiveState(BlockOutcome.LOCAL_COMMIT, COUNTER_LIMIT),
                               BlockOutcome.FULLY_ACCEPTED)
        assert state.consecutive_accepts == COUNTER_LIMIT

    def test_hand_traced_sequence(self):
        state = AdaptiveState()
        lengths = []
        for outcome in [BlockOutcome.FULLY_ACCEPTED, BlockOutcome.FULLY_ACCEPTED,
                        BlockOutcome.CORRECTED, BlockOutcome.FULLY_ACCEPTED]:
            state = record_outcome(state, outcome)
            lengths.append(next_block_length(state, CFG))
        assert lengths == [5, 7, 3, 5]


def test_every_outcome_sequence_up_to_ten_matches_reference():
    checked = 0

    def walk(state, history):
        nonlocal checked
        length = next_block_length(state, CFG)
        assert length in (3, 5, 7)
        assert length == reference_length(history), history
        checked += 1
        if len(history) == 10:
            return
        for outcome in OUTCOMES:
            walk(record_outcome(state, outcome), history + (outcome,))

    walk(AdaptiveState(), ())
    assert checked == sum(3 ** k for k in range(11))
