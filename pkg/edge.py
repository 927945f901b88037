"""
UGSD Edge Draft Engine
Block drafting with entropy tracking, local commits and resync after cloud
verification
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from adaptive import AdaptiveState, BlockOutcome, record_outcome
from core import ConditioningFeatures, TokenId, Transcript, argmax_token, derive_seed
from errors import EscalatedBlockError, InconsistentOutcomeError, InvariantViolation, TerminatedError
from models import LmInterface, perturb_dist
from protocol import PrivacyCounters
from uncertainty import EntropyNats, entropy
from verifier import OutcomeKind, VerificationOutcome

DEFAULT_MAX_TOKENS = 64


def extract_features(raw: bytes, dim: int, source_id: str) -> ConditioningFeatures:
    """On-device stand-in for the audio encoder: a seeded projection of the raw payload"""
    key = int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")
    values = np.random.default_rng(key).standard_normal(dim)
    return ConditioningFeatures(tuple(values.tolist()), source_id)


@dataclass(frozen=True)
class DraftPolicy:
    greedy: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvariantViolation(f"sampling temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class DraftBlock:
    start_index: int
    tokens: tuple[TokenId, ...]
    entropies: tuple[EntropyNats, ...]
    escalated: bool = False

    def __post_init__(self):
        if len(self.tokens) == 0 or len(self.tokens) != len(self.entropies):
            raise InvariantViolation("a draft block needs equal, non-zero token and entropy counts")

    def __len__(self) -> int:
        return len(self.tokens)

    def escalate(self) -> "DraftBlock":
        return replace(self, escalated=True)


@dataclass(frozen=True)
class SessionState:
    """Per-utterance edge state; transcript holds committed or verified tokens only"""

    features: ConditioningFeatures
    eos: TokenId
    prompt: tuple[TokenId, ...] = ()
    transcript: Transcript = field(default_factory=Transcript)
    controller: AdaptiveState = field(default_factory=AdaptiveState)
    counters: PrivacyCounters = field(default_factory=PrivacyCounters)
    seed: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.max_tokens < 1:
            raise InvariantViolation(f"max_tokens must be positive, got {self.max_tokens}")

    def model_prefix(self) -> tuple[TokenId, ...]:
        return self.prompt + self.transcript.tokens


def _select(dist, policy: DraftPolicy, stream: int, position: int) -> TokenId:
    if policy.greedy:
        return argmax_token(dist)
    rng = np.random.default_rng(np.random.SeedSequence([stream, position]))
    sharpened = perturb_dist(dist, policy.temperature, 0.0, rng)
    return int(rng.choice(sharpened.size, p=sharpened.probs))


def draft_block(state: SessionState, draft_lm: LmInterface, length: int,
                policy: DraftPolicy = DraftPolicy()) -> DraftBlock:
    """Draft up to `length` tokens from the committed prefix, stopping at eos or max_tokens"""
    if state.transcript.terminated:
        raise TerminatedError("session already terminated")
    if length < 1:
        raise InvariantViolation(f"block length must be positive, got {length}")

    start = len(state.transcript)
    budget = min(length, state.max_tokens - start)
    prefix = state.model_prefix()
    tokens: list[TokenId] = []
    entropies: list[EntropyNats] = []
    # one sampling stream per utterance
    stream = derive_seed(state.seed, state.features.source_id)
    while len(tokens) < budget:
        dist = draft_lm.next_dist(prefix + tuple(tokens), state.features)
        entropies.append(entropy(dist))
        token = _select(dist, policy, stream, start + len(tokens))
        tokens.append(token)
        if token == state.eos:
            break
    return DraftBlock(start, tuple(tokens), tuple(entropies))


def _check_start(state: SessionState, block: DraftBlock):
    if block.start_index != len(state.transcript):
        raise InvariantViolation(
            f"block drafted at {block.start_index} but transcript has {len(state.transcript)} tokens"
        )


def commit_local(state: SessionState, block: DraftBlock) -> SessionState:
    if block.escalated:
        raise EscalatedBlockError("escalated blocks must go through cloud verification")
    _check_start(state, block)
    return replace(
        state,
        transcript=state.transcript.extend(block.tokens, state.eos, state.max_tokens),
        controller=record_outcome(state.controller, BlockOutcome.LOCAL_COMMIT),
        counters=state.counters.drafted(len(block)),
    )


def committed_tokens(block: DraftBlock, outcome: VerificationOutcome) -> Sequence[TokenId]:
    return block.tokens[:outcome.accepted_count] + (
        () if outcome.correction is None else (outcome.correction,)
    )


def resync(state: SessionState, block: DraftBlock, outcome: VerificationOutcome) -> SessionState:
    """Adopt the verified prefix (plus any correction) and drop the rest of the draft"""
    if not block.escalated:
        raise InconsistentOutcomeError("resync needs an escalated block")
    _check_start(state, block)
    outcome.check(len(block))

    verified = committed_tokens(block, outcome)
    result = BlockOutcome.FULLY_ACCEPTED if outcome.kind == OutcomeKind.FULLY_ACCEPTED \
        else BlockOutcome.CORRECTED
    return replace(
        state,
        transcript=state.transcript.extend(verified, state.eos, state.max_tokens),
        controller=record_outcome(state.controller, result),
        counters=state.counters.escalated(len(block)),
    )
