"""
UGSD Caption Quality Metrics
BLEU-n and ROUGE-L over token-ID sequences, corpus pooling and summary ratios

Pinned parameters:
- BLEU: clipped n-gram precisions, closest-reference brevity penalty, add-one
  smoothing on any order with zero matches
- ROUGE-L: LCS F-measure with beta = 1.2, best reference wins
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from core import TokenId, Transcript
from errors import ConfigError, EmptyCandidateError, EmptyReferenceError, InvariantViolation

ROUGE_BETA = 1.2
BLEU_SMOOTHING = "add-one on zero-match orders"
MAX_BLEU_ORDER = 4


@dataclass(frozen=True)
class ScoredPair:
    candidate: Transcript
    references: tuple[Transcript, ...]

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        if not self.references:
            raise EmptyReferenceError("a scored pair needs at least one reference")

    @classmethod
    def of(cls, candidate: Sequence[TokenId], *references: Sequence[TokenId]) -> "ScoredPair":
        return cls(Transcript(tuple(candidate)), tuple(Transcript(tuple(r)) for r in references))


class Metric(str, Enum):
    BLEU1 = "bleu1"
    BLEU4 = "bleu4"
    ROUGE_L = "rouge_l"


# ========================================
# BLEU
# ========================================

def _ngrams(tokens: tuple[TokenId, ...], n: int) -> Counter:
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


def _closest_ref_length(candidate_len: int, references: Sequence[Transcript]) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - candidate_len), len(r)) for r in references)[1]


def _bleu_stats(pair: ScoredPair, max_n: int) -> tuple[list[int], list[int], int, int]:
    candidate = pair.candidate.tokens
    if not candidate:
        raise EmptyCandidateError("cannot score an empty candidate")
    matches, totals = [], []
    for n in range(1, max_n + 1):
        counts = _ngrams(candidate, n)
        max_ref = Counter()
        for ref in pair.references:
            max_ref |= _ngrams(ref.tokens, n)
        m = sum(min(c, max_ref[g]) for g, c in counts.items())
        t = sum(counts.values())
        # smoothed per pair, so pooled duplicates score like one pair
        if m == 0:
            m, t = 1, t + 1
        matches.append(m)
        totals.append(t)
    return matches, totals, len(candidate), _closest_ref_length(len(candidate), pair.references)


def _combine(matches: Sequence[int], totals: Sequence[int], c: int, r: int) -> float:
    log_sum = math.fsum(math.log(m / t) for m, t in zip(matches, totals))
    precision = math.exp(log_sum / len(matches))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return min(1.0, precision * bp)


def _check_order(max_n: int):
    if not 1 <= max_n <= MAX_BLEU_ORDER:
        raise InvariantViolation(f"BLEU order must be in 1..{MAX_BLEU_ORDER}, got {max_n}")


def bleu(pair: ScoredPair, max_n: int) -> float:
    _check_order(max_n)
    return _combine(*_bleu_stats(pair, max_n))


# ========================================
# ROUGE-L
# ========================================

def lcs_length(a: Sequence[TokenId], b: Sequence[TokenId]) -> int:
    if len(a) < len(b):
        a, b = b, a
    row = [0] * (len(b) + 1)
    for x in a:
        prev_diag = 0
        for j, y in enumerate(b, start=1):
            above = row[j]
            row[j] = prev_diag + 1 if x == y else max(row[j], row[j - 1])
            prev_diag = above
    return row[-1]


def rouge_l(pair: ScoredPair) -> float:
    candidate = pair.candidate.tokens
    if not candidate:
        raise EmptyCandidateError("cannot score an empty candidate")
    beta2 = ROUGE_BETA ** 2
    best = 0.0
    for ref in pair.references:
        if not ref.tokens:
            raise EmptyReferenceError("cannot score against an empty reference")
        ell = lcs_length(candidate, ref.tokens)
        if ell == 0:
            continue
        p, r = ell / len(candidate), ell / len(ref)
        best = max(best, (1 + beta2) * p * r / (r + beta2 * p))
    return best


# ========================================
# CORPUS SCORES
# ========================================

def corpus_bleu(pairs: Sequence[ScoredPair], max_n: int) -> float:
    _check_order(max_n)
    matches, totals = [0] * max_n, [0] * max_n
    c_total = r_total = 0
    for pair in pairs:
        m, t, c, r = _bleu_stats(pair, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c_total += c
        r_total += r
    return _combine(matches, totals, c_total, r_total)


def corpus_score(pairs: Sequence[ScoredPair], metric: Metric | str) -> float:
    metric = Metric(metric)
    if not pairs:
        raise EmptyCandidateError("no pairs to score")
    if metric == Metric.BLEU1:
        return corpus_bleu(pairs, 1)
    if metric == Metric.BLEU4:
        return corpus_bleu(pairs, 4)
    return math.fsum(rouge_l(p) for p in pairs) / len(pairs)


def score_all(pairs: Sequence[ScoredPair]) -> dict[str, float]:
    return {m.value: corpus_score(pairs, m) for m in Metric}


def gap_closure(edge: float, collaborative: float, cloud: float) -> float:
    """Share of the edge-to-cloud quality gap recovered by collaboration"""
    if cloud == edge:
        raise InvariantViolation("no quality gap between edge and cloud")
    return (collaborative - edge) / (cloud - edge)


def relative_improvement(base: float, new: float) -> float:
    if base == 0:
        raise InvariantViolation("relative improvement over a zero baseline")
    return (new - base) / base


# ========================================
# SCORING FILES
# ========================================

def _parse_tokens(text: str, where: str) -> tuple[TokenId, ...]:
    try:
        tokens = tuple(int(t) for t in text.split())
    except ValueError as e:
        raise ConfigError(f"{where}: token ids must be integers ({e})") from e
    if any(t < 0 for t in tokens):
        raise ConfigError(f"{where}: negative token id")
    return tokens


def read_candidates(path: str | Path) -> list[tuple[TokenId, ...]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [_parse_tokens(line, f"{path}:{i}") for i, line in enumerate(lines, start=1)]


def read_references(path: str | Path) -> list[tuple[tuple[TokenId, ...], ...]]:
    records = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        refs = tuple(_parse_tokens(part, f"{path}:{i}") for part in line.split("|"))
        if not any(refs):
            raise ConfigError(f"{path}:{i}: no reference tokens")
        records.append(tuple(r for r in refs if r))
    return records


def format_tokens(tokens: Sequence[TokenId]) -> str:
    return " ".join(str(t) for t in tokens)


def load_pairs(candidates_path: str | Path, references_path: str | Path) -> list[ScoredPair]:
    candidates = read_candidates(candidates_path)
    references = read_references(references_path)
    if len(candidates) != len(references):
        raise ConfigError(
            f"{len(candidates)} candidates but {len(references)} reference lines"
        )
    return [
        ScoredPair(Transcript(c), tuple(Transcript(r) for r in refs))
        for c, refs in zip(candidates, references)
    ]


def scores_csv(scores: Mapping[str, float], percent: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    scale = 100.0 if percent else 1.0
    for name, value in scores.items():
        writer.writerow([name, f"{value * scale:.6f}"])
    writer.writerow(["rouge_beta", ROUGE_BETA])
    writer.writerow(["bleu_smoothing", BLEU_SMOOTHING])
    return buf.getvalue()
