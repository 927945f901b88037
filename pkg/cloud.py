"""
UGSD Cloud Verifier Service
Per-session mirror transcripts, block verification and the TCP server
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Optional

from core import ConditioningFeatures, Transcript
from errors import (
    InvariantViolation,
    MalformedMessage,
    PositionMismatchError,
    SessionUnknownError,
    UgsdError,
    VocabMismatchError,
)
from models import LmInterface
from protocol import (
    ByeMsg,
    ErrorMsg,
    HelloMsg,
    Message,
    VerifyRequestMsg,
    VerifyResponseMsg,
    decode_message,
    encode_message,
)
from verifier import AcceptanceConfig, verify_block

logger = logging.getLogger(__name__)

DRAIN_SECONDS = 2.0

ERROR_CODES = {
    VocabMismatchError: "vocab_mismatch",
    PositionMismatchError: "position_mismatch",
    MalformedMessage: "malformed",
    InvariantViolation: "invariant_violation",
}


@dataclass
class CloudSession:
    session_id: str
    features: ConditioningFeatures
    prompt: tuple[int, ...]
    acceptance: AcceptanceConfig
    mirror: Transcript = field(default_factory=Transcript)
    blocks_verified: int = 0
    corrections: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def stats(self) -> dict:
        return {
            "session_id": self.session_id,
            "blocks_verified": self.blocks_verified,
            "corrections": self.corrections,
            "mirror_length": len(self.mirror),
        }


@dataclass(frozen=True)
class Reply:
    frame: Optional[bytes] = None
    close: bool = False


class CloudVerifierService:
    """Serves verify requests for many sessions; each session is handled in arrival order"""

    def __init__(self, verifier_lm: LmInterface):
        self.verifier_lm = verifier_lm
        self.vocab = verifier_lm.vocab
        self.sessions: dict[str, CloudSession] = {}
        self._lock = threading.Lock()
        self.closed_sessions = 0

    # ========================================
    # SESSION TABLE
    # ========================================

    def session(self, session_id: str) -> CloudSession:
        with self._lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise SessionUnknownError(f"no open session {session_id!r}")
        return session

    def _drop(self, session_id: str, reason: str, final_length: Optional[int] = None):
        with self._lock:
            session = self.sessions.pop(session_id, None)
            if reason == "closed":
                self.closed_sessions += 1
        if session is None:
            return
        emoji = "✅" if reason == "closed" else "⚠️"
        logger.info(
            f"{emoji} session {reason} session_id={session_id} "
            f"blocks_verified={session.blocks_verified} corrections={session.corrections} "
            f"final_length={final_length if final_length is not None else len(session.mirror)}"
        )

    def stats(self) -> list[dict]:
        with self._lock:
            sessions = list(self.sessions.values())
        return [s.stats() for s in sessions]

    def counts(self) -> tuple[int, int]:
        """Open and closed session counts"""
        with self._lock:
            return len(self.sessions), self.closed_sessions

    # ========================================
    # MESSAGE HANDLING
    # ========================================

    def handle_frame(self, frame: bytes) -> Reply:
        try:
            msg = decode_message(frame)
        except (MalformedMessage, InvariantViolation) as e:
            code = ERROR_CODES.get(type(e), "malformed")
            logger.warning(f"⚠️ rejected frame code={code}: {e}")
            return self._error("", code, str(e))
        return self.handle_message(msg)

    def handle_message(self, msg: Message) -> Reply:
        try:
            if isinstance(msg, HelloMsg):
                return self._hello(msg)
            if isinstance(msg, VerifyRequestMsg):
                return self._verify(msg)
            if isinstance(msg, ByeMsg):
                return self._bye(msg)
            raise MalformedMessage(f"the cloud does not accept {msg.type_name} messages")
        except SessionUnknownError as e:
            return self._error(msg.session_id, "session_unknown", str(e))
        except UgsdError as e:
            code = ERROR_CODES.get(type(e), "session_error")
            logger.error(f"❌ session_id={msg.session_id} code={code} {type(e).__name__}: {e}")
            self._drop(msg.session_id, "aborted")
            return self._error(msg.session_id, code, str(e))

    def _error(self, session_id: str, code: str, detail: str) -> Reply:
        return Reply(encode_message(ErrorMsg(session_id, code, detail)), close=True)

    def _hello(self, msg: HelloMsg) -> Reply:
        if msg.vocab_checksum != self.vocab.checksum:
            raise VocabMismatchError(
                f"edge vocabulary {msg.vocab_checksum} does not match {self.vocab.checksum}"
            )
        session = CloudSession(
            session_id=msg.session_id,
            features=ConditioningFeatures(msg.features, msg.source_id),
            prompt=self.vocab.check_tokens(msg.prompt),
            acceptance=AcceptanceConfig(msg.config.rank_threshold).check(self.vocab.size),
        )
        with self._lock:
            if msg.session_id in self.sessions:
                raise MalformedMessage(f"session {msg.session_id} is already open")
            self.sessions[msg.session_id] = session
        logger.debug(f"📡 session opened session_id={msg.session_id} R={msg.config.rank_threshold}")
        return Reply()

    def _verify(self, msg: VerifyRequestMsg) -> Reply:
        session = self.session(msg.session_id)
        with session.lock:
            if msg.base_position != len(session.mirror):
                raise PositionMismatchError(
                    f"edge base_position {msg.base_position} but cloud mirror has "
                    f"{len(session.mirror)} tokens"
                )
            eos = self.vocab.eos
            mirror = session.mirror.extend(self.vocab.check_tokens(msg.prefix_delta), eos)
            prefix = Transcript(session.prompt + mirror.tokens, mirror.terminated)
            outcome = verify_block(self.verifier_lm, prefix, session.features,
                                   msg.draft_tokens, session.acceptance)

            verified = msg.draft_tokens[:outcome.accepted_count]
            if outcome.correction is not None:
                verified += (outcome.correction,)
                session.corrections += 1
            session.mirror = mirror.extend(verified, eos)
            session.blocks_verified += 1

            response = VerifyResponseMsg(
                session_id=msg.session_id,
                accepted_count=outcome.accepted_count,
                correction=outcome.correction,
                verifier_position=len(session.mirror),
            )
        return Reply(encode_message(response))

    def _bye(self, msg: ByeMsg) -> Reply:
        self.session(msg.session_id)
        self._drop(msg.session_id, "closed", msg.final_length)
        return Reply()


# ========================================
# BYTE-STREAM SERVER
# ========================================

class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: CloudVerifierService = self.server.service
        peer = "%s:%s" % self.client_address[:2]
        logger.debug(f"🔌 connection from {peer}")
        for line in self.rfile:
            reply = service.handle_frame(line)
            if reply.frame is not None:
                self.wfile.write(reply.frame)
                self.wfile.flush()
            if reply.close:
                self._drain()
                break

    def _drain(self):
        # keep reading until the edge hangs up so the error line is not reset away
        try:
            self.connection.shutdown(socket.SHUT_WR)
            self.connection.settimeout(DRAIN_SECONDS)
            while self.connection.recv(4096):
                pass
        except OSError:
            pass


class VerifierServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: CloudVerifierService, host: str, port: int):
        self.service = service
        super().__init__((host, port), _StreamHandler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def cloud_serve(verifier_lm: LmInterface, host: str = "127.0.0.1", port: int = 8765,
                status_port: Optional[int] = None):
    """Run the verifier on a TCP socket until interrupted"""
    service = CloudVerifierService(verifier_lm)
    if status_port is not None:
        from status import start_status_server
        start_status_server(service, host, status_port)
    with VerifierServer(service, host, port) as server:
        logger.info(f"🚀 cloud verifier listening on {host}:{server.address[1]}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            logger.info("👋 cloud verifier stopped")


def start_loopback(service: CloudVerifierService, host: str = "127.0.0.1",
                   port: int = 0) -> VerifierServer:
    """Serve in a background thread on an ephemeral port; caller shuts it down"""
    server = VerifierServer(service, host, port)
    thread = threading.Thread(target=server.serve_forever, name="ugsd-verifier", daemon=True)
    thread.start()
    logger.debug(f"🔁 loopback verifier on {server.address[0]}:{server.address[1]}")
    return server
