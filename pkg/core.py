"""
UGSD Core Types
Tokens, vocabularies, probability distributions, features and transcripts
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from errors import (
    AllZeroError,
    InvariantViolation,
    NegativeError,
    NonFiniteError,
    TerminatedError,
    VocabMismatchError,
)

TokenId = int

SUM_TOLERANCE = 1e-9


# ========================================
# VOCABULARY
# ========================================

@dataclass(frozen=True)
class Vocabulary:
    size: int
    eos: TokenId
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.size < 1:
            raise InvariantViolation(f"vocabulary size must be positive, got {self.size}")
        if not 0 <= self.eos < self.size:
            raise InvariantViolation(f"eos {self.eos} outside vocabulary of size {self.size}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise InvariantViolation(
                    f"{len(self.labels)} labels for a vocabulary of size {self.size}"
                )

    @property
    def checksum(self) -> str:
        """64-bit digest of (size, labels, eos) as 16 hex chars"""
        canonical = json.dumps(
            [self.size, list(self.labels) if self.labels is not None else None, self.eos],
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()

    def check_token(self, token: int) -> TokenId:
        if isinstance(token, bool) or not isinstance(token, (int, np.integer)):
            raise VocabMismatchError(f"token {token!r} is not an integer id")
        if not 0 <= token < self.size:
            raise VocabMismatchError(f"token {token} outside vocabulary of size {self.size}")
        return int(token)

    def check_tokens(self, tokens: Iterable[int]) -> tuple[TokenId, ...]:
        return tuple(self.check_token(t) for t in tokens)

    def label(self, token: TokenId) -> str:
        if self.labels is None:
            return str(token)
        return self.labels[token]

    def to_document(self) -> dict:
        return {
            "size": self.size,
            "eos": self.eos,
            "labels": list(self.labels) if self.labels is not None else None,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Vocabulary":
        return cls(size=int(doc["size"]), eos=int(doc["eos"]), labels=doc.get("labels"))


# ========================================
# PROBABILITY DISTRIBUTIONS
# ========================================

@dataclass(frozen=True, eq=False)
class ProbDist:
    """Dense, read-only float64 probability vector over the vocabulary"""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvariantViolation("a distribution must be a non-empty vector")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("distribution contains NaN or infinite entries")
        if np.any(arr < 0):
            raise NegativeError("distribution contains negative entries")
        total = float(arr.sum())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvariantViolation(f"distribution sums to {total!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbDist):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def tolist(self) -> list[float]:
        return self.probs.tolist()

    @classmethod
    def uniform(cls, size: int) -> "ProbDist":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def one_hot(cls, size: int, token: TokenId) -> "ProbDist":
        probs = np.zeros(size)
        probs[token] = 1.0
        return cls(probs)


def normalize(weights: Sequence[float] | np.ndarray) -> ProbDist:
    """Scale non-negative weights into a ProbDist, preserving proportions"""
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvariantViolation("weights must be a non-empty vector")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("weights contain NaN or infinite entries")
    if np.any(arr < 0):
        raise NegativeError("weights contain negative entries")
    total = arr.sum()
    if total <= 0:
        raise AllZeroError("every weight is zero")
    return ProbDist(arr / total)


def argmax_token(dist: ProbDist) -> TokenId:
    # np.argmax returns the first maximum, i.e. the smallest tied token id
    return int(np.argmax(dist.probs))


# ========================================
# CONDITIONING & INPUT
# ========================================

@dataclass(frozen=True)
class ConditioningFeatures:
    values: tuple[float, ...]
    source_id: str

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteError(f"features for {self.source_id!r} contain non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    def check_dim(self, dim: int) -> "ConditioningFeatures":
        if self.dim != dim:
            raise InvariantViolation(f"expected {dim} feature values, got {self.dim}")
        return self


@dataclass(frozen=True)
class UtteranceInput:
    """One request on the device; raw stays here and is never serialized"""

    utterance_id: str
    raw: bytes = field(repr=False)
    features: ConditioningFeatures
    prompt: tuple[TokenId, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))


# ========================================
# TRANSCRIPTS
# ========================================

@dataclass(frozen=True)
class Transcript:
    tokens: tuple[TokenId, ...] = ()
    terminated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def extend(self, tokens: Sequence[TokenId], eos: TokenId,
               max_tokens: Optional[int] = None) -> "Transcript":
        """Append tokens; terminate on eos or when max_tokens is reached"""
        if self.terminated:
            raise TerminatedError("cannot extend a terminated transcript")
        tokens = tuple(int(t) for t in tokens)
        if eos in tokens[:-1]:
            raise InvariantViolation("eos may only appear as the final token")
        merged = self.tokens + tokens
        done = bool(tokens) and tokens[-1] == eos
        if max_tokens is not None:
            if len(merged) > max_tokens:
                raise InvariantViolation(
                    f"transcript of {len(merged)} tokens exceeds max_tokens={max_tokens}"
                )
            done = done or len(merged) >= max_tokens
        return Transcript(merged, done)

    def check(self, vocab: Vocabulary) -> "Transcript":
        vocab.check_tokens(self.tokens)
        if vocab.eos in self.tokens[:-1]:
            raise InvariantViolation("eos may only appear as the final token")
        return self


# ========================================
# SEEDS
# ========================================

def derive_seed(seed: int, name: str) -> int:
    """Independent 63-bit sub-stream seed for a named component"""
    payload = f"{int(seed)}:{name}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little") >> 1
