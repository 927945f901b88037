"""
UGSD Cloud Verifier
Single-pass block scoring, rank-R acceptance and argmax correction
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from core import ConditioningFeatures, ProbDist, TokenId, Transcript, argmax_token
from errors import (
    ConfigError,
    EmptyDraftError,
    InconsistentOutcomeError,
    TerminatedError,
)
from models import LmInterface


class OutcomeKind(str, Enum):
    FULLY_ACCEPTED = "fully_accepted"
    CORRECTED = "corrected"


@dataclass(frozen=True)
class VerificationOutcome:
    accepted_count: int
    correction: Optional[TokenId] = None

    def __post_init__(self):
        if self.accepted_count < 0:
            raise InconsistentOutcomeError(f"negative accepted_count {self.accepted_count}")

    @property
    def kind(self) -> OutcomeKind:
        return OutcomeKind.FULLY_ACCEPTED if self.correction is None else OutcomeKind.CORRECTED

    @property
    def committed_count(self) -> int:
        return self.accepted_count + (0 if self.correction is None else 1)

    def check(self, block_length: int) -> "VerificationOutcome":
        """Enforce FullyAccepted <=> accepted_count == block length <=> no correction"""
        if self.accepted_count > block_length:
            raise InconsistentOutcomeError(
                f"accepted {self.accepted_count} tokens of a {block_length}-token block"
            )
        if self.correction is None and self.accepted_count != block_length:
            raise InconsistentOutcomeError("partial acceptance without a correction")
        if self.correction is not None and self.accepted_count == block_length:
            raise InconsistentOutcomeError("full acceptance reported together with a correction")
        return self


@dataclass(frozen=True)
class AcceptanceConfig:
    rank_threshold: int = 20

    def __post_init__(self):
        if self.rank_threshold < 1:
            raise ConfigError(f"rank threshold must be >= 1, got {self.rank_threshold}")

    def check(self, vocab_size: int) -> "AcceptanceConfig":
        if self.rank_threshold > vocab_size:
            raise ConfigError(
                f"rank threshold {self.rank_threshold} exceeds vocabulary size {vocab_size}"
            )
        return self


def rank_of(dist: ProbDist, token: TokenId) -> int:
    """1 + number of tokens strictly more probable; ties share the best rank"""
    return 1 + int(np.count_nonzero(dist.probs > dist.probs[token]))


def _walk(dists: Sequence[ProbDist], draft: tuple[TokenId, ...],
          cfg: AcceptanceConfig) -> VerificationOutcome:
    for i, (dist, token) in enumerate(zip(dists, draft)):
        if rank_of(dist, token) > cfg.rank_threshold:
            # everything before i was accepted as drafted, so dists[i] is the
            # verifier's own distribution after the verified prefix
            return VerificationOutcome(i, argmax_token(dist))
    return VerificationOutcome(len(draft))


def _check_inputs(verifier_lm: LmInterface, prefix: Transcript, draft: Sequence[TokenId],
                  cfg: AcceptanceConfig) -> tuple[TokenId, ...]:
    if len(draft) == 0:
        raise EmptyDraftError("cannot verify an empty draft")
    if prefix.terminated:
        raise TerminatedError("cannot verify after a terminated prefix")
    cfg.check(verifier_lm.vocab.size)
    return verifier_lm.vocab.check_tokens(draft)


def verify_block(verifier_lm: LmInterface, prefix: Transcript, features: ConditioningFeatures,
                 draft: Sequence[TokenId], cfg: AcceptanceConfig) -> VerificationOutcome:
    draft = _check_inputs(verifier_lm, prefix, draft, cfg)
    dists = verifier_lm.score_block(prefix.tokens, features, draft)
    return _walk(dists, draft, cfg).check(len(draft))


def verify_block_oracle(verifier_lm: LmInterface, prefix: Transcript,
                        features: ConditioningFeatures, draft: Sequence[TokenId],
                        cfg: AcceptanceConfig) -> VerificationOutcome:
    """Same decision from one next_dist call per position"""
    draft = _check_inputs(verifier_lm, prefix, draft, cfg)
    for i, token in enumerate(draft):
        dist = verifier_lm.next_dist(prefix.tokens + draft[:i], features)
        if rank_of(dist, token) > cfg.rank_threshold:
            return VerificationOutcome(i, argmax_token(dist)).check(len(draft))
    return VerificationOutcome(len(draft)).check(len(draft))
