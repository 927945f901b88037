"""
UGSD Wire Protocol
Closed message schemas, newline-delimited JSON codec and privacy counters

Every frame is one UTF-8 JSON object terminated by a newline. Fields are
written in declaration order after a leading "type" discriminator; unknown or
missing fields are rejected, so no message can smuggle the raw utterance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Union

from errors import InvariantViolation, MalformedMessage, NoTokensError, UnknownTypeError

TERMINATOR = b"\n"


# ========================================
# PRIVACY ACCOUNTING
# ========================================

@dataclass(frozen=True)
class PrivacyCounters:
    total_drafted: int = 0
    transmitted: int = 0

    def __post_init__(self):
        if self.transmitted > self.total_drafted:
            raise InvariantViolation(
                f"transmitted {self.transmitted} exceeds total drafted {self.total_drafted}"
            )

    def drafted(self, count: int) -> "PrivacyCounters":
        return replace(self, total_drafted=self.total_drafted + count)

    def escalated(self, count: int) -> "PrivacyCounters":
        return PrivacyCounters(self.total_drafted + count, self.transmitted + count)


def transmission_rate(counters: PrivacyCounters) -> float:
    """Share of drafted tokens that crossed to the cloud"""
    if counters.total_drafted <= 0:
        raise NoTokensError("no tokens drafted")
    return counters.transmitted / counters.total_drafted


# ========================================
# MESSAGE SCHEMAS
# ========================================

@dataclass(frozen=True)
class SessionConfig:
    rank_threshold: int
    gamma: float
    l_min: int
    l_base: int
    l_max: int


@dataclass(frozen=True)
class HelloMsg:
    session_id: str
    vocab_checksum: str
    features: tuple[float, ...]
    source_id: str
    prompt: tuple[int, ...]
    config: SessionConfig

    type_name = "hello"

    def validate(self):
        if not all(math.isfinite(v) for v in self.features):
            raise InvariantViolation("features must be finite")
        if any(t < 0 for t in self.prompt):
            raise InvariantViolation("prompt token ids must be non-negative")


@dataclass(frozen=True)
class VerifyRequestMsg:
    session_id: str
    base_position: int
    prefix_delta: tuple[int, ...]
    draft_tokens: tuple[int, ...]

    type_name = "verify_request"

    def validate(self):
        if not self.draft_tokens:
            raise InvariantViolation("verify_request carries an empty draft")
        if self.base_position < 0:
            raise InvariantViolation("negative base_position")
        if any(t < 0 for t in self.prefix_delta + self.draft_tokens):
            raise InvariantViolation("token ids must be non-negative")


@dataclass(frozen=True)
class VerifyResponseMsg:
    session_id: str
    accepted_count: int
    correction: Optional[int]
    verifier_position: int

    type_name = "verify_response"

    def validate(self):
        if self.accepted_count < 0 or self.verifier_position < 0:
            raise InvariantViolation("negative count or position")
        if self.correction is not None and self.correction < 0:
            raise InvariantViolation("negative correction token")


@dataclass(frozen=True)
class RhoReport:
    transmitted: int
    total_drafted: int


@dataclass(frozen=True)
class ByeMsg:
    session_id: str
    final_length: int
    rho_report: RhoReport

    type_name = "bye"

    def validate(self):
        PrivacyCounters(self.rho_report.total_drafted, self.rho_report.transmitted)
        if self.rho_report.transmitted < 0 or self.final_length < 0:
            raise InvariantViolation("negative counts in bye")


@dataclass(frozen=True)
class ErrorMsg:
    session_id: str
    code: str
    detail: str

    type_name = "error"

    def validate(self):
        pass


Message = Union[HelloMsg, VerifyRequestMsg, VerifyResponseMsg, ByeMsg, ErrorMsg]

MESSAGE_TYPES: dict[str, type] = {
    cls.type_name: cls for cls in (HelloMsg, VerifyRequestMsg, VerifyResponseMsg, ByeMsg, ErrorMsg)
}

NESTED_TYPES: dict[str, type] = {"config": SessionConfig, "rho_report": RhoReport}

_INT_FIELDS = {
    "base_position", "accepted_count", "verifier_position", "final_length",
    "rank_threshold", "l_min", "l_base", "l_max", "transmitted", "total_drafted",
}
_TOKEN_LIST_FIELDS = {"prompt", "prefix_delta", "draft_tokens"}
_STR_FIELDS = {"session_id", "vocab_checksum", "source_id", "code", "detail"}


# ========================================
# CODEC
# ========================================

def _to_wire(obj) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if f.name in NESTED_TYPES:
            value = _to_wire(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def encode_message(msg: Message) -> bytes:
    msg.validate()
    payload = {"type": msg.type_name}
    payload.update(_to_wire(msg))
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + TERMINATOR


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _field_value(name: str, value):
    if name in _INT_FIELDS:
        if not _is_int(value):
            raise MalformedMessage(f"field {name!r} must be an integer")
        return value
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise MalformedMessage(f"field {name!r} must be a string")
        return value
    if name in _TOKEN_LIST_FIELDS:
        if not isinstance(value, list) or not all(_is_int(t) for t in value):
            raise MalformedMessage(f"field {name!r} must be a list of token ids")
        return tuple(value)
    if name == "features":
        if not isinstance(value, list) or not all(_is_real(v) for v in value):
            raise MalformedMessage("field 'features' must be a list of numbers")
        return tuple(float(v) for v in value)
    if name == "gamma":
        if not _is_real(value):
            raise MalformedMessage("field 'gamma' must be a number")
        return float(value)
    if name == "correction":
        if value is not None and not _is_int(value):
            raise MalformedMessage("field 'correction' must be a token id or null")
        return value
    raise MalformedMessage(f"unexpected field {name!r}")


def _from_wire(cls: type, payload: dict):
    if not isinstance(payload, dict):
        raise MalformedMessage(f"{cls.__name__} payload must be an object")
    expected = [f.name for f in fields(cls)]
    unknown = set(payload) - set(expected)
    if unknown:
        raise MalformedMessage(f"unknown fields {sorted(unknown)} in {cls.__name__}")
    missing = [name for name in expected if name not in payload]
    if missing:
        raise MalformedMessage(f"missing fields {missing} in {cls.__name__}")
    kwargs = {}
    for name in expected:
        if name in NESTED_TYPES:
            kwargs[name] = _from_wire(NESTED_TYPES[name], payload[name])
        else:
            kwargs[name] = _field_value(name, payload[name])
    return cls(**kwargs)


def decode_message(frame: bytes) -> Message:
    if frame.endswith(TERMINATOR):
        frame = frame[:-1]
    if TERMINATOR in frame:
        raise MalformedMessage("frame contains more than one line")
    try:
        payload = json.loads(frame.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise MalformedMessage(f"frame is not a UTF-8 JSON object: {e}") from e
    if not isinstance(payload, dict):
        raise MalformedMessage("frame is not a JSON object")
    type_name = payload.pop("type", None)
    if not isinstance(type_name, str):
        raise MalformedMessage("frame has no type discriminator")
    cls = MESSAGE_TYPES.get(type_name)
    if cls is None:
        raise UnknownTypeError(f"unknown message type {type_name!r}")
    msg = _from_wire(cls, payload)
    msg.validate()
    return msg
