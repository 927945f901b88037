from dataclasses import replace
from pathlib import Path
from string import Template

import pytest

from bench import FROZEN_SPEC, BenchmarkSpec, generate_benchmark
from core import ConditioningFeatures, UtteranceInput, Vocabulary
from models import TableModel
from session import ProtocolConfig
from adaptive import LengthConfig
from uncertainty import GateConfig
from verifier import AcceptanceConfig

FIXTURES = Path(__file__).parent / "fixtures"

GOLDEN_SESSION_ID = "00000000-0000-4000-8000-000000000001"

SMALL_SPEC = BenchmarkSpec(
    vocab_size=24,
    corpus_seed=11,
    corpus_sentences=200,
    ngram_order=2,
    draft_noise_scale=0.6,
    utterance_count=24,
    max_tokens=16,
    feature_dim=4,
)


@pytest.fixture
def vocab3():
    return Vocabulary(3, eos=2)


@pytest.fixture
def golden_utterance():
    return UtteranceInput(
        utterance_id="golden",
        raw=b"RIFF-golden-waveform-bytes",
        features=ConditioningFeatures((0.5, -0.25), "golden"),
        prompt=(),
    )


@pytest.fixture
def golden_models(vocab3):
    """Scripted draft/verifier pair: one corrected escalation, then a local commit"""
    draft = TableModel(vocab3)
    draft.set((), "golden", [0.5, 0.5, 0.0])
    draft.set((0,), "golden", [0.0, 1.0, 0.0])
    draft.set((0, 1), "golden", [0.0, 0.0, 1.0])
    draft.set((1,), "golden", [0.0, 1.0, 0.0])
    draft.set((1, 1), "golden", [0.0, 0.0, 1.0])

    verifier = TableModel(vocab3)
    verifier.set((), "golden", [0.2, 0.7, 0.1])
    return draft, verifier


@pytest.fixture
def golden_config():
    return ProtocolConfig(
        gate=GateConfig(0.5),
        acceptance=AcceptanceConfig(1),
        lengths=LengthConfig(),
        max_tokens=16,
    )


@pytest.fixture
def golden_frames(vocab3):
    text = (FIXTURES / "golden_session.ndjson").read_text(encoding="utf-8")
    return Template(text).substitute(vocab_checksum=vocab3.checksum).encode("utf-8")


@pytest.fixture(scope="session")
def small_bench():
    return generate_benchmark(SMALL_SPEC)


@pytest.fixture(scope="session")
def wide_bench():
    return generate_benchmark(replace(SMALL_SPEC, utterance_count=200))


@pytest.fixture(scope="session")
def frozen_bench():
    return generate_benchmark(FROZEN_SPEC)
