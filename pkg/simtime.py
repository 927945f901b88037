"""
UGSD Simulated Time
Virtual-clock replay of decode traces into latency and throughput metrics

Pinned metric definitions:
- prefill = input tokens x edge prefill cost; ITPS = input tokens / prefill seconds
- locally committed tokens are emitted when their draft step finishes; tokens
  committed after a verify round trip are emitted when the response arrives
- TTFT = emission time of the first output token
- OET = last emission time - first emission time
- OTPS = output tokens / OET seconds; outputs of one token, or with OET = 0,
  are degenerate and use max(OET, one edge decode step)
- total = clock at Terminate
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from errors import InvalidTrace

# ========================================
# TRACE EVENTS
# ========================================


@dataclass(frozen=True)
class DraftToken:
    index: int
    name = "draft_token"


@dataclass(frozen=True)
class GateDecision:
    escalated: bool
    name = "gate_decision"


@dataclass(frozen=True)
class Send:
    bytes: int
    name = "send"


@dataclass(frozen=True)
class Verify:
    block_len: int
    name = "verify"


@dataclass(frozen=True)
class Receive:
    bytes: int
    name = "receive"


@dataclass(frozen=True)
class Commit:
    count: int
    name = "commit"


@dataclass(frozen=True)
class Terminate:
    name = "terminate"


TraceEvent = Union[DraftToken, GateDecision, Send, Verify, Receive, Commit, Terminate]

EVENT_TYPES = {cls.name: cls for cls in (DraftToken, GateDecision, Send, Verify, Receive, Commit, Terminate)}


@dataclass(frozen=True)
class DecodeTrace:
    events: tuple[TraceEvent, ...]
    input_token_count: int = 0

    @property
    def output_token_count(self) -> int:
        return sum(e.count for e in self.events if isinstance(e, Commit))

    @property
    def drafted(self) -> int:
        return sum(1 for e in self.events if isinstance(e, DraftToken))

    @property
    def transmitted(self) -> int:
        return sum(e.block_len for e in self.events if isinstance(e, Verify))

    @property
    def verify_rounds(self) -> int:
        return sum(1 for e in self.events if isinstance(e, Verify))

    @property
    def messages_sent(self) -> int:
        return sum(1 for e in self.events if isinstance(e, Send))

    @property
    def rho(self) -> float:
        return self.transmitted / self.drafted if self.drafted else 0.0

    def validate(self) -> "DecodeTrace":
        if self.input_token_count < 0:
            raise InvalidTrace("negative input token count")
        terminates = [i for i, e in enumerate(self.events) if isinstance(e, Terminate)]
        if len(terminates) != 1:
            raise InvalidTrace(f"expected exactly one Terminate, found {len(terminates)}")
        if terminates[0] != len(self.events) - 1:
            raise InvalidTrace("Terminate must be the last event")
        awaiting = False
        for event in self.events:
            if isinstance(event, Verify):
                if awaiting:
                    raise InvalidTrace("Verify before the previous response was received")
                if event.block_len < 1:
                    raise InvalidTrace("Verify of an empty block")
                awaiting = True
            elif isinstance(event, Receive):
                if not awaiting:
                    raise InvalidTrace("Receive without a preceding Verify")
                awaiting = False
            elif isinstance(event, (Send, Commit)):
                value = event.bytes if isinstance(event, Send) else event.count
                if value < 0:
                    raise InvalidTrace(f"negative value in {event}")
        if awaiting:
            raise InvalidTrace("trace ends while awaiting a verify response")
        return self


class TraceRecorder:
    def __init__(self, input_token_count: int = 0):
        self.input_token_count = input_token_count
        self.events: list[TraceEvent] = []

    def add(self, event: TraceEvent):
        self.events.append(event)

    def trace(self) -> DecodeTrace:
        return DecodeTrace(tuple(self.events), self.input_token_count)


# ========================================
# TRACE FILES
# ========================================

def trace_to_lines(trace: DecodeTrace) -> list[str]:
    lines = [json.dumps({"input_token_count": trace.input_token_count}, separators=(",", ":"))]
    for event in trace.events:
        record = {"event": event.name}
        record.update(asdict(event))
        lines.append(json.dumps(record, separators=(",", ":")))
    return lines


def trace_from_lines(lines: Iterable[str]) -> DecodeTrace:
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise InvalidTrace("empty trace file")
    try:
        header = json.loads(lines[0])
        events = []
        for number, line in enumerate(lines[1:], start=2):
            record = json.loads(line)
            cls = EVENT_TYPES.get(record.pop("event", None))
            if cls is None:
                raise InvalidTrace(f"line {number}: unknown trace event")
            if set(record) != {f.name for f in fields(cls)}:
                raise InvalidTrace(f"line {number}: unexpected fields {sorted(record)}")
            events.append(cls(**record))
        return DecodeTrace(tuple(events), int(header["input_token_count"])).validate()
    except (ValueError, KeyError, TypeError) as e:
        raise InvalidTrace(f"unreadable trace: {e}") from e


def write_trace(path: str | Path, trace: DecodeTrace):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(trace_to_lines(trace)) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> DecodeTrace:
    return trace_from_lines(Path(path).read_text(encoding="utf-8").splitlines())


# ========================================
# COST MODEL & REPLAY
# ========================================

@dataclass(frozen=True)
class CostModel:
    """Per-event costs in milliseconds; bandwidth 0 means unlimited"""

    edge_prefill_ms_per_input_token: float = 0.4
    edge_decode_ms_per_token: float = 650.0
    cloud_verify_fixed_ms: float = 60.0
    cloud_verify_ms_per_token: float = 8.0
    network_rtt_ms: float = 40.0
    bandwidth_bytes_per_ms: float = 1250.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise InvalidTrace(f"cost field {f.name} must be finite and >= 0, got {value}")

    def transfer_ms(self, size: int) -> float:
        if self.bandwidth_bytes_per_ms == 0:
            return 0.0
        return size / self.bandwidth_bytes_per_ms


@dataclass(frozen=True)
class MetricsReport:
    ttft_ms: float
    itps: float
    oet_ms: float
    otps: float
    total_ms: float
    rho: float
    output_token_count: int
    degenerate: bool = False


def replay(trace: DecodeTrace, cost: CostModel) -> MetricsReport:
    trace.validate()
    prefill_ms = trace.input_token_count * cost.edge_prefill_ms_per_input_token
    clock = prefill_ms
    draft_times: list[float] = []
    emissions: list[float] = []
    verified_since_commit = False

    for event in trace.events:
        if isinstance(event, DraftToken):
            clock += cost.edge_decode_ms_per_token
            draft_times.append(clock)
        elif isinstance(event, (Send, Receive)):
            clock += cost.transfer_ms(event.bytes)
        elif isinstance(event, Verify):
            clock += (cost.cloud_verify_fixed_ms
                      + cost.cloud_verify_ms_per_token * event.block_len
                      + cost.network_rtt_ms)
            verified_since_commit = True
        elif isinstance(event, Commit):
            if verified_since_commit:
                emissions.extend([clock] * event.count)
            else:
                if event.count > len(draft_times):
                    raise InvalidTrace("local commit of more tokens than were drafted")
                emissions.extend(draft_times[:event.count])
            draft_times = []
            verified_since_commit = False
    total_ms = clock

    output = len(emissions)
    ttft_ms = emissions[0] if emissions else total_ms
    oet_ms = emissions[-1] - emissions[0] if emissions else 0.0
    itps = trace.input_token_count / (prefill_ms / 1000.0) if prefill_ms > 0 else 0.0

    degenerate = output <= 1 or oet_ms <= 0
    if not degenerate:
        otps = output / (oet_ms / 1000.0)
    else:
        span_ms = max(oet_ms, cost.edge_decode_ms_per_token)
        otps = output / (span_ms / 1000.0) if span_ms > 0 else 0.0

    return MetricsReport(
        ttft_ms=ttft_ms,
        itps=itps,
        oet_ms=oet_ms,
        otps=otps,
        total_ms=total_ms,
        rho=trace.rho,
        output_token_count=output,
        degenerate=degenerate,
    )


# ========================================
# COMPARISON TABLES
# ========================================

CSV_HEADER = ["label", "ttft_ms", "itps", "oet_ms", "otps", "total_ms", "rho", "output_tokens"]


def aggregate(traces: Sequence[DecodeTrace], cost: CostModel) -> MetricsReport:
    """Mean per-utterance report; rho pooled over tokens, outputs summed"""
    if not traces:
        raise InvalidTrace("no traces to aggregate")
    reports = [replay(t, cost) for t in traces]
    n = len(reports)
    drafted = sum(t.drafted for t in traces)
    return MetricsReport(
        ttft_ms=math.fsum(r.ttft_ms for r in reports) / n,
        itps=math.fsum(r.itps for r in reports) / n,
        oet_ms=math.fsum(r.oet_ms for r in reports) / n,
        otps=math.fsum(r.otps for r in reports) / n,
        total_ms=math.fsum(r.total_ms for r in reports) / n,
        rho=sum(t.transmitted for t in traces) / drafted if drafted else 0.0,
        output_token_count=sum(r.output_token_count for r in reports),
        degenerate=any(r.degenerate for r in reports),
    )


def compare_configs(traces: Mapping[str, DecodeTrace | Sequence[DecodeTrace]],
                    cost: CostModel) -> dict[str, MetricsReport]:
    table = {}
    for label, group in traces.items():
        group = [group] if isinstance(group, DecodeTrace) else list(group)
        table[label] = aggregate(group, cost)
    return table


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def report_row(label: str, report: MetricsReport) -> list[str]:
    return [
        label,
        _fmt(report.ttft_ms),
        _fmt(report.itps),
        _fmt(report.oet_ms),
        _fmt(report.otps),
        _fmt(report.total_ms),
        _fmt(report.rho),
        str(report.output_token_count),
    ]


def metrics_csv(table: Mapping[str, MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for label, report in table.items():
        writer.writerow(report_row(label, report))
    return buf.getvalue()
