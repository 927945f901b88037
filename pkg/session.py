"""
UGSD Edge Session Loop
Runs one utterance end to end: draft, gate, commit locally or round-trip to
the cloud verifier, resync, adapt the block length, record the trace
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field
from typing import Optional

from adaptive import LengthConfig, next_block_length
from core import Transcript, UtteranceInput, Vocabulary
from edge import (
    DEFAULT_MAX_TOKENS,
    DraftBlock,
    DraftPolicy,
    SessionState,
    commit_local,
    draft_block,
    resync,
)
from errors import (
    InconsistentOutcomeError,
    InvariantViolation,
    MalformedMessage,
    PositionMismatchError,
    TransportFailure,
    VocabMismatchError,
)
from models import LmInterface
from protocol import (
    ByeMsg,
    ErrorMsg,
    HelloMsg,
    PrivacyCounters,
    RhoReport,
    SessionConfig,
    VerifyRequestMsg,
    VerifyResponseMsg,
    decode_message,
    encode_message,
)
from simtime import Commit, DecodeTrace, DraftToken, GateDecision, Receive, Send, Terminate, TraceRecorder, Verify
from transport import Transport
from uncertainty import GateConfig, should_escalate
from verifier import AcceptanceConfig, VerificationOutcome

logger = logging.getLogger(__name__)

SESSION_NAMESPACE = uuid.UUID("6f1c2a4e-93b7-4d15-8a0e-2c5d7b9e1f30")

# errors that end the session early but still return what was committed
ABORT_ERRORS = (
    TransportFailure, VocabMismatchError, PositionMismatchError, MalformedMessage, InconsistentOutcomeError,
    InvariantViolation,
)


@dataclass(frozen=True)
class ProtocolConfig:
    gate: GateConfig = field(default_factory=GateConfig.never)
    acceptance: AcceptanceConfig = field(default_factory=AcceptanceConfig)
    lengths: LengthConfig = field(default_factory=LengthConfig)
    max_tokens: int = DEFAULT_MAX_TOKENS
    draft_policy: DraftPolicy = field(default_factory=DraftPolicy)
    seed: int = 0

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            rank_threshold=self.acceptance.rank_threshold,
            gamma=self.gate.gamma,
            l_min=self.lengths.l_min,
            l_base=self.lengths.l_base,
            l_max=self.lengths.l_max,
        )


@dataclass(frozen=True)
class SessionResult:
    session_id: str
    transcript: Transcript
    trace: DecodeTrace
    counters: PrivacyCounters
    error: Optional[str] = None

    @property
    def aborted(self) -> bool:
        return self.error is not None


def session_id_for(seed: int, utterance_id: str) -> str:
    return str(uuid.uuid5(SESSION_NAMESPACE, f"{seed}:{utterance_id}"))


def _raise_cloud_error(msg: ErrorMsg):
    detail = f"cloud aborted session code={msg.code}: {msg.detail}"
    if msg.code == "vocab_mismatch":
        raise VocabMismatchError(detail)
    if msg.code == "position_mismatch":
        raise PositionMismatchError(detail)
    raise TransportFailure(detail)


class CloudClient:
    """Edge side of one cloud session; opens it lazily on the first escalation"""

    def __init__(self, transport: Transport, session_id: str, vocab: Vocabulary,
                 utterance: UtteranceInput, config: SessionConfig, recorder: TraceRecorder):
        self.transport = transport
        self.session_id = session_id
        self.vocab = vocab
        self.utterance = utterance
        self.config = config
        self.recorder = recorder
        self.opened = False
        self.synced = 0

    def _send(self, msg):
        frame = encode_message(msg)
        self.transport.send(frame)
        self.recorder.add(Send(len(frame)))

    def _open(self):
        self._send(HelloMsg(
            session_id=self.session_id,
            vocab_checksum=self.vocab.checksum,
            features=self.utterance.features.values,
            source_id=self.utterance.features.source_id,
            prompt=self.utterance.prompt,
            config=self.config,
        ))
        self.opened = True

    def verify(self, transcript: Transcript, block: DraftBlock) -> VerificationOutcome:
        if not self.opened:
            self._open()
        request = VerifyRequestMsg(
            session_id=self.session_id,
            base_position=self.synced,
            prefix_delta=transcript.tokens[self.synced:],
            draft_tokens=block.tokens,
        )
        frame = encode_message(request)
        self.recorder.add(Send(len(frame)))
        reply = self.transport.request(frame)

        msg = decode_message(reply)
        if isinstance(msg, ErrorMsg):
            _raise_cloud_error(msg)
        if not isinstance(msg, VerifyResponseMsg) or msg.session_id != self.session_id:
            raise MalformedMessage(f"expected a verify_response for {self.session_id}")
        self.recorder.add(Verify(len(block)))
        self.recorder.add(Receive(len(reply)))

        outcome = VerificationOutcome(msg.accepted_count, msg.correction).check(len(block))
        expected = len(transcript) + outcome.committed_count
        if msg.verifier_position != expected:
            raise PositionMismatchError(
                f"cloud is at {msg.verifier_position} but the edge will be at {expected}"
            )
        self.synced = msg.verifier_position
        return outcome

    def close(self, final_length: int, counters: PrivacyCounters):
        if not self.opened:
            return
        self._send(ByeMsg(
            session_id=self.session_id,
            final_length=final_length,
            rho_report=RhoReport(counters.transmitted, counters.total_drafted),
        ))


def edge_run_session(utterance: UtteranceInput, draft_lm: LmInterface, cloud: Transport,
                     cfg: ProtocolConfig = ProtocolConfig(),
                     session_id: Optional[str] = None) -> SessionResult:
    """Decode one utterance; transport failures return the partial transcript with an error"""
    session_id = session_id or session_id_for(cfg.seed, utterance.utterance_id)
    vocab = draft_lm.vocab
    cfg.acceptance.check(vocab.size)

    state = SessionState(
        features=utterance.features,
        eos=vocab.eos,
        prompt=vocab.check_tokens(utterance.prompt),
        seed=cfg.seed,
        max_tokens=cfg.max_tokens,
    )
    recorder = TraceRecorder(len(utterance.prompt) + utterance.features.dim)
    client = CloudClient(cloud, session_id, vocab, utterance, cfg.session_config(), recorder)
    error = None

    try:
        while not state.transcript.terminated:
            length = next_block_length(state.controller, cfg.lengths)
            block = draft_block(state, draft_lm, length, cfg.draft_policy)
            for offset in range(len(block)):
                recorder.add(DraftToken(block.start_index + offset))

            escalate = should_escalate(block.entropies, cfg.gate)
            recorder.add(GateDecision(escalate))
            if not escalate:
                state = commit_local(state, block)
                recorder.add(Commit(len(block)))
                continue

            block = block.escalate()
            outcome = client.verify(state.transcript, block)
            state = resync(state, block, outcome)
            recorder.add(Commit(outcome.committed_count))
        client.close(len(state.transcript), state.counters)
    except ABORT_ERRORS as e:
        error = f"{type(e).__name__}: {e}"
        logger.error(f"❌ session aborted session_id={session_id} "
                     f"utterance_id={utterance.utterance_id} committed={len(state.transcript)} {error}")

    recorder.add(Terminate())
    result = SessionResult(session_id, state.transcript, recorder.trace(), state.counters, error)
    if error is None:
        logger.debug(
            f"📊 session done utterance_id={utterance.utterance_id} tokens={len(state.transcript)} "
            f"drafted={state.counters.total_drafted} transmitted={state.counters.transmitted}"
        )
    return result
