"""
UGSD Command Line
serve | run | sweep | eval | replay

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

from dotenv import load_dotenv

from bench import Benchmark, edge_block_entropies, generate_benchmark, load_bundle
from cloud import CloudVerifierService, cloud_serve, start_loopback
from config import RunConfig, load_run_config, parse_gamma
from core import Transcript
from errors import BadSnapshot, ConfigError, UgsdError
from evalmetrics import ScoredPair, format_tokens, load_pairs, score_all, scores_csv
from models import load_snapshot
from session import ProtocolConfig, SessionResult, edge_run_session
from simtime import (
    CSV_HEADER,
    CostModel,
    aggregate,
    compare_configs,
    metrics_csv,
    read_trace,
    report_row,
    write_trace,
)
from transport import InProcessTransport, StreamTransport, Transport
from uncertainty import GateConfig, calibrate_gamma
from verifier import AcceptanceConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

SWEEP_HEADER = ["label", "bleu1", "bleu4", "rouge_l"] + CSV_HEADER[1:]
DEFAULT_GRIDS = {
    "gamma": ["-inf", "0.25", "0.5", "1.0", "1.5", "inf"],
    "R": ["1", "2", "5", "10", "20"],
    "L": ["3", "5", "7", "10", "20", "50", "dynamic"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


# ========================================
# EXPERIMENT PLUMBING
# ========================================

@dataclass
class RunOutcome:
    bench: Benchmark
    protocol: ProtocolConfig
    results: list[SessionResult]

    @property
    def failures(self) -> list[SessionResult]:
        return [r for r in self.results if r.aborted]


def load_benchmark(cfg: RunConfig) -> Benchmark:
    if cfg.bundle is not None:
        return load_bundle(cfg.bundle)
    return generate_benchmark(cfg.benchmark)


def protocol_for(cfg: RunConfig, bench: Benchmark) -> ProtocolConfig:
    base = ProtocolConfig(acceptance=cfg.acceptance, lengths=cfg.lengths,
                          max_tokens=bench.spec.max_tokens, seed=cfg.session_seed)
    if cfg.strategy == "edge_only":
        return replace(base, gate=GateConfig.never())
    if cfg.strategy == "cloud_only":
        return replace(base, gate=GateConfig.always(), acceptance=AcceptanceConfig(1))
    if cfg.gate.gamma is not None:
        return replace(base, gate=GateConfig(cfg.gate.gamma))
    if cfg.gate.escalation_rate is None:
        raise ConfigError("the ugsd strategy needs gate.gamma or gate.escalation_rate")
    entropies = edge_block_entropies(bench.draft_lm, bench.utterances, cfg.lengths,
                                     bench.spec.max_tokens)
    gamma = calibrate_gamma(entropies, cfg.gate.escalation_rate)
    logger.info(f"🎯 calibrated gamma={gamma:.6f} escalation_rate={cfg.gate.escalation_rate}")
    return replace(base, gate=GateConfig(gamma))


@contextmanager
def open_cloud(cfg: RunConfig, bench: Benchmark) -> Iterator[Callable[[], Transport]]:
    """Yield a factory of per-session transports for the configured channel"""
    kind = cfg.transport.kind
    if kind == "stream":
        yield lambda: StreamTransport(cfg.transport.host, cfg.transport.port, cfg.transport.timeout)
        return
    service = CloudVerifierService(bench.verifier_lm)
    if kind == "inprocess":
        yield lambda: InProcessTransport(service)
        return
    server = start_loopback(service, cfg.transport.host)
    host, port = server.address
    try:
        yield lambda: StreamTransport(host, port, cfg.transport.timeout)
    finally:
        server.shutdown()
        server.server_close()


def decode_all(bench: Benchmark, protocol: ProtocolConfig, transports: Callable[[], Transport],
               workers: int = 1) -> list[SessionResult]:
    def one(utterance) -> SessionResult:
        transport = transports()
        try:
            return edge_run_session(utterance, bench.draft_lm, transport, protocol)
        finally:
            transport.close()

    utterances = sorted(bench.utterances, key=lambda u: u.utterance_id)
    if workers == 1:
        return [one(u) for u in utterances]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="ugsd-edge") as pool:
        return list(pool.map(one, utterances))


def run_experiment(cfg: RunConfig, bench: Optional[Benchmark] = None) -> RunOutcome:
    bench = bench or load_benchmark(cfg)
    protocol = protocol_for(cfg, bench)
    with open_cloud(cfg, bench) as transports:
        results = decode_all(bench, protocol, transports, cfg.workers)
    outcome = RunOutcome(bench, protocol, results)
    for failed in outcome.failures:
        logger.warning(f"⚠️ partial transcript session_id={failed.session_id} {failed.error}")
    return outcome


def scored_pairs(outcome: RunOutcome) -> list[ScoredPair]:
    references = {u.utterance_id: r for u, r in zip(outcome.bench.utterances, outcome.bench.references)}
    ids = sorted(references)
    return [
        ScoredPair(_non_empty(result.transcript), (references[uid],))
        for uid, result in zip(ids, outcome.results)
    ]


def _non_empty(transcript: Transcript) -> Transcript:
    # an aborted session may have committed nothing; score it with a token no reference has
    return transcript if len(transcript) else Transcript((-1,))


def metrics_table(results: Sequence[SessionResult], labels: Sequence[str], cost: CostModel) -> str:
    traces = {label: r.trace for label, r in zip(labels, results)}
    traces["mean"] = [r.trace for r in results]
    return metrics_csv(compare_configs(traces, cost))


# ========================================
# SUBCOMMANDS
# ========================================

def cmd_serve(cfg: RunConfig) -> int:
    if cfg.serve.verifier:
        verifier_lm = load_snapshot(cfg.serve.verifier)
    else:
        verifier_lm = load_benchmark(cfg).verifier_lm
    cloud_serve(verifier_lm, cfg.serve.host, cfg.serve.port, cfg.serve.status_port)
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    outcome = run_experiment(cfg)
    out = Path(cfg.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)

    ids = sorted(u.utterance_id for u in outcome.bench.utterances)
    (out / "transcripts.txt").write_text(
        "".join(format_tokens(r.transcript.tokens) + "\n" for r in outcome.results), encoding="utf-8"
    )
    for uid, result in zip(ids, outcome.results):
        write_trace(out / "traces" / f"{uid}.ndjson", result.trace)
    (out / "metrics.csv").write_text(metrics_table(outcome.results, ids, cfg.cost), encoding="utf-8")
    scores = score_all(scored_pairs(outcome))
    (out / "quality.csv").write_text(scores_csv(scores), encoding="utf-8")

    mean = aggregate([r.trace for r in outcome.results], cfg.cost)
    logger.info(
        f"✅ run complete strategy={cfg.strategy} utterances={len(ids)} gamma={outcome.protocol.gate.gamma} "
        f"bleu1={scores['bleu1']:.4f} rho={mean.rho:.4f} otps={mean.otps:.3f} output_dir={out}"
    )
    return EXIT_RUNTIME if outcome.failures else EXIT_OK


def sweep_point(cfg: RunConfig, axis: str, value: str) -> tuple[str, RunConfig]:
    if axis == "gamma":
        gamma = parse_gamma(value)
        return f"gamma={value}", replace(cfg, strategy="ugsd", gate=replace(cfg.gate, gamma=gamma, escalation_rate=None))
    if axis == "R":
        return f"R={value}", replace(cfg, acceptance=AcceptanceConfig(int(value)))
    if axis == "L":
        if value == "dynamic":
            lengths = replace(cfg.lengths, fixed_l=None)
        else:
            lengths = replace(cfg.lengths, fixed_l=int(value))
        return f"L={value}", replace(cfg, lengths=lengths)
    raise ConfigError(f"unknown sweep axis {axis!r}")


def sweep_rows(cfg: RunConfig, axis: str, values: Sequence[str]) -> list[list[str]]:
    if not values:
        raise ConfigError("sweep grid is empty")
    bench = load_benchmark(cfg)
    rows = []
    for value in values:
        try:
            label, point = sweep_point(cfg, axis, value)
        except ValueError as e:
            raise ConfigError(f"bad {axis} value {value!r}: {e}") from e
        outcome = run_experiment(point, bench)
        scores = score_all(scored_pairs(outcome))
        report = aggregate([r.trace for r in outcome.results], cfg.cost)
        row = report_row(label, report)
        rows.append([label] + [f"{scores[m]:.6f}" for m in ("bleu1", "bleu4", "rouge_l")] + row[1:])
        logger.info(f"📊 sweep point {label} bleu1={scores['bleu1']:.4f} rho={report.rho:.4f}")
    return rows


def cmd_sweep(cfg: RunConfig, axis: str, values: Sequence[str]) -> int:
    rows = sweep_rows(cfg, axis, values)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SWEEP_HEADER)] + [",".join(row) for row in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"✅ sweep over {axis} wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_eval(candidates: str, references: str, percent: bool = False) -> int:
    pairs = load_pairs(candidates, references)
    for number, pair in enumerate(pairs, start=1):
        if not pair.candidate.tokens:
            raise ConfigError(f"{candidates}:{number}: empty candidate")
    sys.stdout.write(scores_csv(score_all(pairs), percent=percent))
    return EXIT_OK


def cmd_replay(traces_dir: str, cost: CostModel, output: Optional[str] = None) -> int:
    paths = sorted(Path(traces_dir).glob("*.ndjson"))
    if not paths:
        raise ConfigError(f"no trace files in {traces_dir}")
    traces = {p.stem: read_trace(p) for p in paths}
    traces["mean"] = [traces[p.stem] for p in paths]
    csv_text = metrics_csv(compare_configs(traces, cost))
    if output:
        Path(output).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


# ========================================
# ARGUMENTS
# ========================================

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--seed", type=int, help="top-level seed for every random sub-stream")
    p.add_argument("--bundle", help="benchmark bundle directory")


def _add_run_options(p: argparse.ArgumentParser):
    _add_common(p)
    p.add_argument("--strategy", choices=["ugsd", "edge_only", "cloud_only"])
    p.add_argument("--gamma", help="entropy gate threshold (inf / -inf allowed)")
    p.add_argument("--escalation-rate", type=float, help="calibrate gamma to this escalation rate")
    p.add_argument("--rank", type=int, help="rank acceptance threshold R")
    p.add_argument("--fixed-l", type=int, help="constant block length instead of adaptive")
    p.add_argument("--transport", choices=["inprocess", "loopback", "stream"])
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ugsd", description="Uncertainty-gated edge-cloud speculative decoding")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (env UGSD_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    serve = sub.add_parser("serve", help="run the cloud verifier")
    _add_common(serve)
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.add_argument("--status-port", type=int, help="also serve /health and /sessions over HTTP")
    serve.add_argument("--verifier", help="verifier model snapshot (YAML)")

    run = sub.add_parser("run", help="decode the benchmark under one strategy")
    _add_run_options(run)

    sweep = sub.add_parser("sweep", help="repeat run over a grid of gamma, R or L")
    _add_run_options(sweep)
    sweep.add_argument("--axis", choices=["gamma", "R", "L"], required=True)
    sweep.add_argument("--values", help="comma-separated grid; L accepts 'dynamic'")

    evaluate = sub.add_parser("eval", help="score candidate token lines against references")
    evaluate.add_argument("candidates")
    evaluate.add_argument("references")
    evaluate.add_argument("--percent", action="store_true", help="scale scores by 100")

    rep = sub.add_parser("replay", help="recompute metrics from trace files")
    rep.add_argument("traces_dir")
    rep.add_argument("--config", help="YAML experiment file supplying the cost model")
    rep.add_argument("--output", help="write CSV here instead of stdout")
    return parser


def _flags(args: argparse.Namespace) -> dict:
    gamma = getattr(args, "gamma", None)
    fixed_l = getattr(args, "fixed_l", None)
    flags = {
        "seed": getattr(args, "seed", None),
        "bundle": getattr(args, "bundle", None),
        "strategy": getattr(args, "strategy", None),
        "acceptance.rank_threshold": getattr(args, "rank", None),
        "lengths.fixed_l": fixed_l,
        "transport.kind": getattr(args, "transport", None),
        "workers": getattr(args, "workers", None),
        "output_dir": getattr(args, "output_dir", None),
    }
    if args.command == "serve":
        flags.update({
            "serve.host": args.host,
            "serve.port": args.port,
            "serve.status_port": args.status_port,
            "serve.verifier": args.verifier,
        })
    elif args.command in ("run", "sweep"):
        flags.update({"transport.host": args.host, "transport.port": args.port})
    # a gate flag replaces the whole gate section so gamma and rate never clash
    if gamma is not None:
        flags["gate"] = {"gamma": parse_gamma(gamma)}
    elif getattr(args, "escalation_rate", None) is not None:
        flags["gate"] = {"escalation_rate": args.escalation_rate}
    return flags


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "eval":
        return cmd_eval(args.candidates, args.references, args.percent)
    cfg = load_run_config(args.config, _flags(args))
    if args.command == "replay":
        return cmd_replay(args.traces_dir, cfg.cost, args.output)
    if args.command == "serve":
        return cmd_serve(cfg)
    if args.command == "run":
        return cmd_run(cfg)
    values = args.values.split(",") if args.values else DEFAULT_GRIDS[args.axis]
    return cmd_sweep(cfg, args.axis, [v.strip() for v in values if v.strip()])


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"❌ {e}")
        return EXIT_CONFIG

    level = (args.log_level or os.getenv("UGSD_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        return _dispatch(args)
    except (ConfigError, BadSnapshot) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_CONFIG
    except (UgsdError, OSError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
