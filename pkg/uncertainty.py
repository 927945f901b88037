"""
UGSD Uncertainty Gate
Token entropy in nats and the block escalation rule
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core import ProbDist
from errors import EmptyBlockError, InvariantViolation

EntropyNats = float


def entropy(dist: ProbDist) -> EntropyNats:
    """-sum p log p with 0 log 0 = 0, natural log"""
    p = dist.probs[dist.probs > 0]
    # numpy sums with pairwise accumulation
    h = float(-np.sum(p * np.log(p)))
    return min(max(h, 0.0), math.log(dist.size))


@dataclass(frozen=True)
class GateConfig:
    gamma: float

    def __post_init__(self):
        gamma = float(self.gamma)
        if math.isnan(gamma):
            raise InvariantViolation("gate threshold gamma must not be NaN")
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def never(cls) -> "GateConfig":
        return cls(math.inf)

    @classmethod
    def always(cls) -> "GateConfig":
        return cls(-math.inf)


def should_escalate(entropies: Sequence[EntropyNats], gate: GateConfig) -> bool:
    if len(entropies) == 0:
        raise EmptyBlockError("cannot gate an empty block")
    return max(entropies) > gate.gamma


def calibrate_gamma(block_max_entropies: Sequence[EntropyNats], escalation_rate: float) -> float:
    """Threshold under which roughly (1 - escalation_rate) of the observed blocks stay local"""
    if len(block_max_entropies) == 0:
        raise EmptyBlockError("no block entropies to calibrate against")
    if not 0.0 <= escalation_rate <= 1.0:
        raise InvariantViolation(f"escalation rate must be in [0, 1], got {escalation_rate}")
    if escalation_rate == 0.0:
        return math.inf
    if escalation_rate == 1.0:
        return -math.inf
    return float(np.quantile(np.asarray(block_max_entropies, dtype=np.float64),
                             1.0 - escalation_rate))
