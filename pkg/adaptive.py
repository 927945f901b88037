"""
UGSD Adaptive Block Length
Chooses the next draft block length from recent verification outcomes
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from errors import InvariantViolation

COUNTER_LIMIT = 2 ** 32


class BlockOutcome(str, Enum):
    NONE = "none"
    CORRECTED = "corrected"
    FULLY_ACCEPTED = "fully_accepted"
    LOCAL_COMMIT = "local_commit"


@dataclass(frozen=True)
class LengthConfig:
    l_min: int = 3
    l_base: int = 5
    l_max: int = 7
    fixed_l: Optional[int] = None

    def __post_init__(self):
        if min(self.l_min, self.l_base, self.l_max) < 1:
            raise InvariantViolation("block lengths must be positive")
        if not self.l_min <= self.l_base <= self.l_max:
            raise InvariantViolation(
                f"need l_min <= l_base <= l_max, got {self.l_min}/{self.l_base}/{self.l_max}"
            )
        if self.fixed_l is not None and self.fixed_l < 1:
            raise InvariantViolation(f"fixed_l must be positive, got {self.fixed_l}")

    @classmethod
    def fixed(cls, length: int) -> "LengthConfig":
        return cls(fixed_l=length)


@dataclass(frozen=True)
class AdaptiveState:
    last_outcome: BlockOutcome = BlockOutcome.NONE
    consecutive_accepts: int = 0


def next_block_length(state: AdaptiveState, cfg: LengthConfig) -> int:
    if cfg.fixed_l is not None:
        return cfg.fixed_l
    if state.last_outcome == BlockOutcome.NONE:
        return cfg.l_base
    if state.last_outcome == BlockOutcome.CORRECTED:
        return cfg.l_min
    if state.consecutive_accepts >= 2:
        return cfg.l_max
    return cfg.l_base


def record_outcome(state: AdaptiveState, outcome: BlockOutcome) -> AdaptiveState:
    if outcome == BlockOutcome.NONE:
        raise InvariantViolation("cannot record the empty outcome")
    if outcome == BlockOutcome.CORRECTED:
        return replace(state, last_outcome=outcome, consecutive_accepts=0)
    # accepted and locally committed blocks both extend the streak
    return replace(
        state,
        last_outcome=outcome,
        consecutive_accepts=min(state.consecutive_accepts + 1, COUNTER_LIMIT),
    )
