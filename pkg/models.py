"""
UGSD Language Models
The interface both engines decode against, plus the desk-scale stand-ins for
the edge draft model and the cloud verifier
"""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np
import yaml

from core import (
    ConditioningFeatures,
    ProbDist,
    TokenId,
    Transcript,
    Vocabulary,
    argmax_token,
    normalize,
)
from errors import BadSnapshot, EmptyCorpusError, InvariantViolation, UgsdError

logger = logging.getLogger(__name__)


class LmInterface(Protocol):
    vocab: Vocabulary

    def next_dist(self, prefix: Sequence[TokenId], features: ConditioningFeatures) -> ProbDist:
        ...

    def score_block(self, prefix: Sequence[TokenId], features: ConditioningFeatures,
                    draft: Sequence[TokenId]) -> list[ProbDist]:
        ...


class BaseModel(ABC):
    """Shared prefix validation and block scoring along the drafted prefix"""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    @abstractmethod
    def _dist(self, prefix: tuple[TokenId, ...], features: ConditioningFeatures) -> ProbDist:
        ...

    def next_dist(self, prefix: Sequence[TokenId], features: ConditioningFeatures) -> ProbDist:
        return self._dist(self.vocab.check_tokens(prefix), features)

    def score_block(self, prefix: Sequence[TokenId], features: ConditioningFeatures,
                    draft: Sequence[TokenId]) -> list[ProbDist]:
        """One distribution per draft position, each conditioned on the drafted tokens before it"""
        context = self.vocab.check_tokens(prefix)
        draft = self.vocab.check_tokens(draft)
        return [self._dist(context + draft[:k], features) for k in range(len(draft))]


# ========================================
# N-GRAM MODEL
# ========================================

class NGramModel(BaseModel):
    """Add-alpha smoothed n-gram over token ids; ignores conditioning features"""

    kind = "ngram"

    def __init__(self, vocab: Vocabulary, order: int, alpha: float,
                 counts: Optional[Mapping[tuple[TokenId, ...], Sequence[int]]] = None):
        super().__init__(vocab)
        if order < 1:
            raise InvariantViolation(f"n-gram order must be >= 1, got {order}")
        if not alpha > 0:
            raise InvariantViolation(f"smoothing alpha must be positive, got {alpha}")
        self.order = int(order)
        self.alpha = float(alpha)
        self.counts: dict[tuple[TokenId, ...], np.ndarray] = {}
        for context, row in (counts or {}).items():
            arr = np.asarray(row, dtype=np.int64)
            if arr.shape != (vocab.size,) or np.any(arr < 0):
                raise InvariantViolation(f"bad count row for context {context}")
            arr.setflags(write=False)
            self.counts[tuple(int(t) for t in context)] = arr

    def context_of(self, prefix: tuple[TokenId, ...]) -> tuple[TokenId, ...]:
        if self.order == 1:
            return ()
        return prefix[-(self.order - 1):]

    def _dist(self, prefix, features):
        row = self.counts.get(self.context_of(prefix))
        if row is None:
            return ProbDist.uniform(self.vocab.size)
        return ProbDist((row + self.alpha) / (row.sum() + self.alpha * self.vocab.size))

    def to_document(self) -> dict:
        return {
            "kind": self.kind,
            "order": self.order,
            "alpha": self.alpha,
            "vocab": self.vocab.to_document(),
            "counts": [
                {"context": list(context), "counts": row.tolist()}
                for context, row in sorted(self.counts.items())
            ],
        }


def ngram_fit(corpus: Sequence[Transcript], order: int, alpha: float,
              vocab: Vocabulary) -> NGramModel:
    """Count next-token occurrences for every (up to n-1 token) context in the corpus"""
    if not corpus:
        raise EmptyCorpusError("cannot fit an n-gram model on an empty corpus")
    if order < 1:
        raise InvariantViolation(f"n-gram order must be >= 1, got {order}")

    counts: dict[tuple[TokenId, ...], np.ndarray] = defaultdict(
        lambda: np.zeros(vocab.size, dtype=np.int64)
    )
    for sentence in corpus:
        tokens = vocab.check_tokens(sentence.tokens)
        for i, token in enumerate(tokens):
            context = tokens[max(0, i - (order - 1)):i] if order > 1 else ()
            counts[context][token] += 1

    model = NGramModel(vocab, order, alpha, counts)
    logger.debug(f"📊 fitted {order}-gram on {len(corpus)} sentences, {len(counts)} contexts")
    return model


# ========================================
# PERTURBED MODEL
# ========================================

def perturb_dist(base_dist: ProbDist, temperature: float, noise_scale: float,
                 rng: np.random.Generator) -> ProbDist:
    """Sharpen/flatten by temperature, apply multiplicative noise, renormalize"""
    if not temperature > 0:
        raise InvariantViolation(f"temperature must be positive, got {temperature}")
    if noise_scale < 0:
        raise InvariantViolation(f"noise scale must be non-negative, got {noise_scale}")
    if temperature == 1.0 and noise_scale == 0.0:
        return base_dist

    with np.errstate(divide="ignore"):
        logits = np.log(base_dist.probs) / temperature
    weights = np.exp(logits - logits.max())
    if noise_scale > 0:
        weights = weights * (1.0 + noise_scale * rng.random(weights.size))
    return normalize(weights)


def _prefix_key(prefix: tuple[TokenId, ...]) -> int:
    digest = hashlib.blake2b(np.asarray(prefix, dtype=np.int64).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


class PerturbedModel(BaseModel):
    """A base model seen through temperature and seeded noise

    The noise stream is keyed by (seed, prefix length, prefix digest), so the
    output is a pure function of the prefix and concurrent calls are
    order-independent.
    """

    kind = "perturbed"

    def __init__(self, base: BaseModel, temperature: float = 1.0,
                 noise_scale: float = 0.0, seed: int = 0):
        super().__init__(base.vocab)
        if not temperature > 0:
            raise InvariantViolation(f"temperature must be positive, got {temperature}")
        if noise_scale < 0:
            raise InvariantViolation(f"noise scale must be non-negative, got {noise_scale}")
        self.base = base
        self.temperature = float(temperature)
        self.noise_scale = float(noise_scale)
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def _rng(self, prefix: tuple[TokenId, ...]) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, len(prefix), _prefix_key(prefix)])
        )

    def _dist(self, prefix, features):
        base_dist = self.base._dist(prefix, features)
        return perturb_dist(base_dist, self.temperature, self.noise_scale, self._rng(prefix))

    def to_document(self) -> dict:
        return {
            "kind": self.kind,
            "temperature": self.temperature,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "vocab": self.vocab.to_document(),
            "base": self.base.to_document(),
        }


# ========================================
# TABLE MODEL
# ========================================

class TableModel(BaseModel):
    """Explicit (prefix, source_id) -> distribution lookup, uniform elsewhere"""

    kind = "table"

    def __init__(self, vocab: Vocabulary,
                 entries: Optional[Mapping[tuple[tuple[TokenId, ...], str], ProbDist]] = None):
        super().__init__(vocab)
        self.entries: dict[tuple[tuple[TokenId, ...], str], ProbDist] = {}
        for (prefix, source_id), dist in (entries or {}).items():
            self.set(prefix, source_id, dist)

    def set(self, prefix: Sequence[TokenId], source_id: str, dist: ProbDist | Sequence[float]):
        if not isinstance(dist, ProbDist):
            dist = ProbDist(dist)
        if dist.size != self.vocab.size:
            raise InvariantViolation(
                f"distribution of size {dist.size} for a vocabulary of size {self.vocab.size}"
            )
        self.entries[(self.vocab.check_tokens(prefix), source_id)] = dist

    def _dist(self, prefix, features):
        dist = self.entries.get((prefix, features.source_id))
        if dist is None:
            return ProbDist.uniform(self.vocab.size)
        return dist

    def to_document(self) -> dict:
        return {
            "kind": self.kind,
            "vocab": self.vocab.to_document(),
            "entries": [
                {"prefix": list(prefix), "source_id": source_id, "probs": dist.tolist()}
                for (prefix, source_id), dist in self.entries.items()
            ],
        }


# ========================================
# DECODING ORACLE
# ========================================

def greedy_decode(lm: LmInterface, prompt: Sequence[TokenId], features: ConditioningFeatures,
                  max_tokens: int) -> Transcript:
    """Plain argmax decoding with a single model, token by token"""
    prompt = tuple(prompt)
    transcript = Transcript()
    while not transcript.terminated:
        token = argmax_token(lm.next_dist(prompt + transcript.tokens, features))
        transcript = transcript.extend([token], lm.vocab.eos, max_tokens)
    return transcript


# ========================================
# SNAPSHOTS
# ========================================

def model_from_document(doc: dict) -> BaseModel:
    try:
        kind = doc["kind"]
        vocab = Vocabulary.from_document(doc["vocab"])
        if kind == NGramModel.kind:
            counts = {tuple(item["context"]): item["counts"] for item in doc["counts"]}
            return NGramModel(vocab, int(doc["order"]), float(doc["alpha"]), counts)
        if kind == PerturbedModel.kind:
            base = model_from_document(doc["base"])
            if base.vocab != vocab:
                raise BadSnapshot("perturbed model and its base disagree on the vocabulary")
            return PerturbedModel(base, float(doc["temperature"]),
                                  float(doc["noise_scale"]), int(doc["seed"]))
        if kind == TableModel.kind:
            model = TableModel(vocab)
            for item in doc["entries"]:
                model.set(item["prefix"], str(item["source_id"]), item["probs"])
            return model
    except BadSnapshot:
        raise
    except (KeyError, TypeError, ValueError, UgsdError) as e:
        raise BadSnapshot(f"invalid model snapshot: {e}") from e
    raise BadSnapshot(f"unknown model kind {kind!r}")


def save_snapshot(model: BaseModel, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(model.to_document(), f, sort_keys=False)


def load_snapshot(path: str | Path) -> BaseModel:
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise BadSnapshot(f"cannot read model snapshot {path}: {e}") from e
    if not isinstance(doc, dict):
        raise BadSnapshot(f"model snapshot {path} is not a mapping")
    return model_from_document(doc)
