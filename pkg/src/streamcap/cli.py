"""Command-line entry point.

Exit codes: 0 success, 1 failed check, 2 usage or parse error, 3 I/O error,
4 degenerate computation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .codec import VocabSpec
from .errors import DegenerateInstanceError, FormatError, InvalidArgumentError
from .formats import event_record, read_events, read_stream, write_events, write_snapshot, write_stream
from .grad import finite_diff_check, random_instance
from .memory import DEFAULT_EMA_DECAY, DEFAULT_ITERATIONS, DEFAULT_MEMORY_SIZE, VARIANTS, StreamingMemory
from .metrics import DEFAULT_THRESHOLDS, evaluate
from .scheduler import (
    DEFAULT_DROP_PROB,
    DEFAULT_PREFIX_MODE,
    DEFAULT_STRIDE,
    PREFIX_MODES,
    build_prefix_tokens,
    make_decoding_examples,
    make_decoding_points,
)
from .sim import OracleCodebook, gen_stream, make_stream_spec, run_pipeline, variant_config

log = logging.getLogger("streamcap")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 0, 1, 2, 3, 4
GRADCHECK_TOLERANCE = 1e-3


class UsageError(Exception):
    pass


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from exc
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1]")
    return values


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def _pipeline_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--variant", default="clustering", choices=VARIANTS)
    p.add_argument("--memory-size", type=_positive_int, default=DEFAULT_MEMORY_SIZE)
    p.add_argument("--tau", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--no-momentum", dest="momentum", action="store_false")
    p.add_argument("--decay", type=float, default=DEFAULT_EMA_DECAY, help="EMA decay rate")
    p.add_argument("--stride", type=_positive_int, default=DEFAULT_STRIDE)
    p.add_argument("--prefix-mode", default=DEFAULT_PREFIX_MODE, choices=PREFIX_MODES)
    p.add_argument("--thresholds", type=_thresholds, default=DEFAULT_THRESHOLDS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common, pipeline = _common_parser(), _pipeline_parser()
    parser = argparse.ArgumentParser(prog="streamcap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stream-memory", parents=[common, pipeline],
                       help="run a memory over a token-stream file and snapshot it at decoding points")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("make-decoding-examples", parents=[common],
                       help="emit prefix/target training examples from ground-truth events")
    p.add_argument("input", type=Path)
    p.add_argument("--frames", type=_positive_int, default=64)
    p.add_argument("--stride", type=_positive_int, default=DEFAULT_STRIDE)
    p.add_argument("--fps", type=float, default=None,
                   help="frames per second; default spreads --frames over the last event end")
    p.add_argument("--drop-prob", type=float, default=DEFAULT_DROP_PROB)
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("eval-dense", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--thresholds", type=_thresholds, default=DEFAULT_THRESHOLDS)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("simulate", parents=[common, pipeline],
                       help="run the streaming pipeline on a planted-cluster stream")
    p.add_argument("--frames", type=_positive_int, default=64)
    p.add_argument("--tokens-per-frame", type=_positive_int, default=257)
    p.add_argument("--dim", type=_positive_int, default=16)
    p.add_argument("--concepts", type=_positive_int, default=5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="compare memory gradients with finite differences")
    p.add_argument("--instances", type=_positive_int, default=100)
    p.add_argument("--trials", type=_positive_int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-4)
    return parser


def pipeline_config(args) -> dict:
    return {
        "variant": args.variant,
        "memory_size": args.memory_size,
        "tau": args.tau,
        "momentum": args.momentum,
        "ema_decay": args.decay,
        "stride": args.stride,
        "prefix_mode": args.prefix_mode,
        "thresholds": list(args.thresholds),
        "seed": args.seed,
    }


def _memory_config(args, tokens_per_frame: int):
    return variant_config(args.variant, args.memory_size, tokens_per_frame, args.tau, args.momentum, args.decay)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_stream_memory(args) -> int:
    stream = read_stream(args.input)
    cfg = _memory_config(args, stream.tokens_per_frame)
    schedule = make_decoding_points(stream.num_frames, args.stride)
    args.out.mkdir(parents=True, exist_ok=True)
    mem = StreamingMemory(cfg)
    points = {}
    for t, frame in enumerate(stream):
        mem.push(frame)
        if t + 1 in schedule.points:
            name = f"point_{t + 1:06d}.smem"
            write_snapshot(args.out / name, mem.snapshot())
            points[str(t + 1)] = name
    _write_json(args.out / "manifest.json", {
        "input": str(args.input),
        "frames": stream.num_frames,
        "tokens_per_frame": stream.tokens_per_frame,
        "dim": stream.dim,
        "fps": stream.fps,
        "config": pipeline_config(args),
        "points": points,
        "fallback_frames": mem.fallback_frames,
    })
    return EXIT_OK


def cmd_make_decoding_examples(args) -> int:
    if not 0.0 <= args.drop_prob <= 1.0:
        raise UsageError("--drop-prob must lie in [0, 1]")
    videos = read_events(args.input)
    schedule = make_decoding_points(args.frames, args.stride)
    lines = []
    for idx, vid in enumerate(sorted(videos)):
        events = videos[vid]
        fps = args.fps if args.fps else args.frames / max(e.end_sec for e in events)
        seed = int(np.random.SeedSequence([args.seed, idx]).generate_state(1)[0])
        for ex in make_decoding_examples(events, schedule, fps, seed, args.augment, args.drop_prob):
            lines.append(json.dumps({
                "video_id": vid,
                "point_frame": ex.point,
                "prefix": [_event_dict(e) for e in ex.prefix_events],
                "target": [_event_dict(e) for e in ex.target_events],
                "seed": seed,
            }))
    text = "".join(line + "\n" for line in lines)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text, encoding="utf-8")
    return EXIT_OK


def _event_dict(ev) -> dict:
    rec = event_record("", ev)
    del rec["video_id"]
    return rec


def cmd_eval_dense(args) -> int:
    preds = read_events(args.pred)
    gts = read_events(args.gt)
    report = evaluate(preds, gts, args.thresholds, threads=args.threads)
    text = json.dumps(report.to_json(), indent=2)
    print(text)
    if args.out is not None:
        args.out.write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = make_stream_spec(args.frames, args.tokens_per_frame, args.dim, args.concepts,
                                args.noise, args.seed, args.fps)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc
    stream, gts = gen_stream(spec)
    codebook = OracleCodebook.from_spec(spec)
    cfg = _memory_config(args, args.tokens_per_frame)
    schedule = make_decoding_points(args.frames, args.stride)
    result = run_pipeline(stream, gts, codebook, cfg, schedule, args.thresholds)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_stream(out / "stream.stk", stream)
    codebook.vocab.save(out / "vocab.txt")
    write_events(out / "gt.jsonl", {"sim": gts}, codebook.vocab)
    write_events(out / "pred.jsonl", {"sim": result.predictions}, codebook.vocab)
    _write_json(out / "report.json", {**result.report.to_json(), "concept_recall": result.concept_recall})
    vocab_spec = VocabSpec(len(codebook.vocab), stream.duration_sec)
    with open(out / "decoding.jsonl", "w", encoding="utf-8") as fh:
        for point in schedule:
            earlier = [e for e in result.predictions if e.end_sec <= point / stream.fps]
            prefix = build_prefix_tokens(earlier, args.prefix_mode, vocab_spec)
            fh.write(json.dumps({"point_frame": point, "prefix_tokens": prefix}) + "\n")
    _write_json(out / "manifest.json", {
        "frames": args.frames,
        "tokens_per_frame": args.tokens_per_frame,
        "dim": args.dim,
        "concepts": args.concepts,
        "noise": args.noise,
        "fps": args.fps,
        "config": pipeline_config(args),
        "points": list(schedule.points),
        "files": ["stream.stk", "vocab.txt", "gt.jsonl", "pred.jsonl", "report.json", "decoding.jsonl"],
    })
    return EXIT_OK


def _gradcheck_one(seed: int, trials: int, epsilon: float):
    rng = np.random.default_rng(seed)
    state, frame, cfg = random_instance(rng)
    return finite_diff_check(state, frame, cfg, epsilon, trials, seed)


def cmd_gradcheck(args) -> int:
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be positive")
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(args.instances)]

    def run(seed):
        return _gradcheck_one(seed, args.trials, args.epsilon)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            reports = list(pool.map(run, seeds))
    else:
        reports = [run(s) for s in seeds]
    max_err = max(r.max_rel_error for r in reports)
    flipped = sum(r.flipped_assignments for r in reports)
    ok = max_err < GRADCHECK_TOLERANCE
    print(f"max_rel_error={max_err:.3e} flipped_trials={flipped} instances={len(reports)} "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "stream-memory": cmd_stream_memory,
    "make-decoding-examples": cmd_make_decoding_examples,
    "eval-dense": cmd_eval_dense,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"streamcap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InvalidArgumentError) as exc:
        print(f"streamcap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateInstanceError as exc:
        print(f"streamcap {args.command}: degenerate instance: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"streamcap {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
