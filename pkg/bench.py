"""
UGSD Synthetic Benchmark
Seeded grammar corpus, verifier/draft model pair, utterances and reference
captions, plus bundle files so a benchmark can be served and replayed later

The toy models ignore conditioning features; features are still extracted and
carried so the protocol sees realistic hello payloads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from adaptive import LengthConfig, next_block_length
from core import TokenId, Transcript, UtteranceInput, Vocabulary, argmax_token, derive_seed
from edge import SessionState, commit_local, draft_block, extract_features
from errors import BadSnapshot, ConfigError
from evalmetrics import format_tokens, read_references
from models import BaseModel, PerturbedModel, greedy_decode, load_snapshot, ngram_fit, save_snapshot

logger = logging.getLogger(__name__)

TIE_BREAK_NOISE = 1e-6
RAW_PAYLOAD_BYTES = 64


@dataclass(frozen=True)
class BenchmarkSpec:
    vocab_size: int = 32
    corpus_seed: int = 20240917
    corpus_sentences: int = 600
    ngram_order: int = 3
    alpha: float = 0.05
    draft_temperature: float = 0.7
    draft_noise_scale: float = 0.5
    draft_seed: int = 7
    utterance_count: int = 100
    max_tokens: int = 24
    feature_dim: int = 16
    prompt_length: int = 2
    branching: int = 4
    verifier_noise_scale: float = 0.0

    def __post_init__(self):
        counts = ("corpus_sentences", "ngram_order", "utterance_count", "max_tokens",
                  "feature_dim", "branching")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"benchmark {name} must be positive, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.prompt_length < 0:
            raise ConfigError("prompt_length must be non-negative")
        if not self.alpha > 0 or not self.draft_temperature > 0:
            raise ConfigError("alpha and draft_temperature must be positive")
        if self.draft_noise_scale < 0 or self.verifier_noise_scale < 0:
            raise ConfigError("noise scales must be non-negative")

    @classmethod
    def from_document(cls, doc: dict) -> "BenchmarkSpec":
        if not isinstance(doc, dict):
            raise ConfigError("benchmark section must be a mapping")
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(f"unknown benchmark keys: {sorted(unknown)}")
        try:
            return cls(**{k: (float(v) if isinstance(getattr(cls, k), float) else int(v))
                          for k, v in doc.items()})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid benchmark value: {e}") from e


# The benchmark the trend checks run on
FROZEN_SPEC = BenchmarkSpec()


# ========================================
# GRAMMAR
# ========================================

@dataclass(frozen=True)
class Grammar:
    """First-order Markov grammar over the non-eos tokens"""

    successors: np.ndarray
    weights: np.ndarray
    end_prob: np.ndarray
    eos: TokenId

    def sample(self, rng: np.random.Generator, max_len: int) -> tuple[TokenId, ...]:
        states = len(self.end_prob)
        token = int(rng.integers(states))
        tokens = [token]
        while len(tokens) < max_len - 1:
            if rng.random() < self.end_prob[token]:
                break
            pick = rng.choice(self.successors.shape[1], p=self.weights[token])
            token = int(self.successors[token, pick])
            tokens.append(token)
        tokens.append(self.eos)
        return tuple(tokens)


def make_grammar(vocab: Vocabulary, branching: int, rng: np.random.Generator) -> Grammar:
    states = vocab.size - 1
    k = min(branching, states)
    successors = np.stack([rng.choice(states, size=k, replace=False) for _ in range(states)])
    weights = rng.dirichlet(np.ones(k), size=states)
    end_prob = rng.uniform(0.04, 0.2, size=states)
    return Grammar(successors, weights, end_prob, vocab.eos)


def sample_corpus(grammar: Grammar, sentences: int, max_len: int,
                  rng: np.random.Generator) -> list[Transcript]:
    return [Transcript(grammar.sample(rng, max_len), terminated=True) for _ in range(sentences)]


# ========================================
# BENCHMARK
# ========================================

@dataclass
class Benchmark:
    spec: BenchmarkSpec
    vocab: Vocabulary
    reference_lm: BaseModel
    verifier_lm: BaseModel
    draft_lm: BaseModel
    utterances: list[UtteranceInput]
    references: list[Transcript]


def _make_utterances(spec: BenchmarkSpec, grammar: Grammar) -> list[UtteranceInput]:
    raw_rng = np.random.default_rng(derive_seed(spec.corpus_seed, "features"))
    prompt_rng = np.random.default_rng(derive_seed(spec.corpus_seed, "prompts"))
    utterances = []
    for i in range(spec.utterance_count):
        utterance_id = f"utt-{i:04d}"
        raw = raw_rng.bytes(RAW_PAYLOAD_BYTES)
        opening = grammar.sample(prompt_rng, spec.max_tokens)
        prompt = opening[:min(spec.prompt_length, len(opening) - 1)]
        utterances.append(UtteranceInput(
            utterance_id=utterance_id,
            raw=raw,
            features=extract_features(raw, spec.feature_dim, utterance_id),
            prompt=prompt,
        ))
    return utterances


def generate_benchmark(spec: BenchmarkSpec = FROZEN_SPEC) -> Benchmark:
    vocab = Vocabulary(spec.vocab_size, eos=spec.vocab_size - 1)
    grammar = make_grammar(vocab, spec.branching,
                           np.random.default_rng(derive_seed(spec.corpus_seed, "grammar")))
    corpus = sample_corpus(grammar, spec.corpus_sentences, spec.max_tokens,
                           np.random.default_rng(derive_seed(spec.corpus_seed, "corpus")))

    ngram = ngram_fit(corpus, spec.ngram_order, spec.alpha, vocab)
    # jitter only breaks probability ties so rank and argmax agree
    reference_lm = PerturbedModel(ngram, 1.0, TIE_BREAK_NOISE, derive_seed(spec.corpus_seed, "jitter"))
    verifier_lm = reference_lm
    if spec.verifier_noise_scale > 0:
        verifier_lm = PerturbedModel(reference_lm, 1.0, spec.verifier_noise_scale,
                                     derive_seed(spec.corpus_seed, "verifier"))
    draft_lm = PerturbedModel(reference_lm, spec.draft_temperature, spec.draft_noise_scale,
                              spec.draft_seed)

    utterances = _make_utterances(spec, grammar)
    references = [
        greedy_decode(reference_lm, u.prompt, u.features, spec.max_tokens) for u in utterances
    ]
    logger.info(
        f"📊 benchmark ready vocab={spec.vocab_size} order={spec.ngram_order} "
        f"utterances={len(utterances)} corpus={len(corpus)}"
    )
    return Benchmark(spec, vocab, reference_lm, verifier_lm, draft_lm, utterances, references)


def disagreement_rate(bench: Benchmark) -> float:
    """Share of reference positions where draft and verifier argmax differ"""
    disagree = total = 0
    for utterance, reference in zip(bench.utterances, bench.references):
        for i in range(len(reference)):
            prefix = utterance.prompt + reference.tokens[:i]
            draft = argmax_token(bench.draft_lm.next_dist(prefix, utterance.features))
            verifier = argmax_token(bench.verifier_lm.next_dist(prefix, utterance.features))
            disagree += draft != verifier
            total += 1
    return disagree / total if total else 0.0


def edge_block_entropies(draft_lm: BaseModel, utterances: Sequence[UtteranceInput],
                         lengths: LengthConfig, max_tokens: int) -> list[float]:
    """Block-max entropies of an edge-only decode, for choosing a gate threshold"""
    maxima = []
    for utterance in utterances:
        state = SessionState(utterance.features, draft_lm.vocab.eos, prompt=utterance.prompt,
                             max_tokens=max_tokens)
        while not state.transcript.terminated:
            block = draft_block(state, draft_lm, next_block_length(state.controller, lengths))
            maxima.append(max(block.entropies))
            state = commit_local(state, block)
    return maxima


# ========================================
# BUNDLES
# ========================================

def save_bundle(bench: Benchmark, directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "benchmark.yaml").open("w", encoding="utf-8") as f:
        yaml.safe_dump(asdict(bench.spec), f, sort_keys=False)
    save_snapshot(bench.reference_lm, directory / "reference.yaml")
    save_snapshot(bench.verifier_lm, directory / "verifier.yaml")
    save_snapshot(bench.draft_lm, directory / "draft.yaml")
    with (directory / "utterances.jsonl").open("w", encoding="utf-8") as f:
        for u in bench.utterances:
            f.write(json.dumps({
                "utterance_id": u.utterance_id,
                "raw": u.raw.hex(),
                "prompt": list(u.prompt),
            }) + "\n")
    (directory / "references.txt").write_text(
        "".join(format_tokens(r.tokens) + "\n" for r in bench.references), encoding="utf-8"
    )
    logger.info(f"✅ saved benchmark bundle to {directory}")


def load_bundle(directory: str | Path) -> Benchmark:
    directory = Path(directory)
    try:
        spec = BenchmarkSpec.from_document(
            yaml.safe_load((directory / "benchmark.yaml").read_text(encoding="utf-8"))
        )
        lines = (directory / "utterances.jsonl").read_text(encoding="utf-8").splitlines()
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read benchmark bundle {directory}: {e}") from e

    reference_lm = load_snapshot(directory / "reference.yaml")
    verifier_lm = load_snapshot(directory / "verifier.yaml")
    draft_lm = load_snapshot(directory / "draft.yaml")
    if not reference_lm.vocab == verifier_lm.vocab == draft_lm.vocab:
        raise BadSnapshot("bundle models disagree on the vocabulary")

    utterances = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            raw = bytes.fromhex(record["raw"])
            utterances.append(UtteranceInput(
                utterance_id=record["utterance_id"],
                raw=raw,
                features=extract_features(raw, spec.feature_dim, record["utterance_id"]),
                prompt=tuple(record["prompt"]),
            ))
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"utterances.jsonl:{number}: {e}") from e

    references = [Transcript(refs[0], terminated=True)
                  for refs in read_references(directory / "references.txt")]
    if len(references) != len(utterances):
        raise ConfigError(f"{len(utterances)} utterances but {len(references)} references")
    return Benchmark(spec, reference_lm.vocab, reference_lm, verifier_lm, draft_lm,
                     utterances, references)
