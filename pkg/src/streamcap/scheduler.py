"""Decoding points and the prefix/target supervision built around them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .codec import TimedEvent, VocabSpec, encode_events, quantize_time, sort_events
from .errors import InvalidArgumentError

DEFAULT_STRIDE = 32
DEFAULT_DROP_PROB = 0.5
PREFIX_MODES = ("none", "captions", "captions_and_time")
DEFAULT_PREFIX_MODE = "captions"


@dataclass(frozen=True)
class DecodingSchedule:
    points: tuple[int, ...]
    stride_frames: int

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class DecodingExample:
    point: int
    prefix_events: tuple[TimedEvent, ...]
    target_events: tuple[TimedEvent, ...]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_decoding_points(num_frames: int, stride: int) -> DecodingSchedule:
    """Every ``stride`` frames, with the last point moved onto the final frame."""
    if stride < 1 or stride > num_frames:
        raise InvalidArgumentError(f"stride must lie in [1, {num_frames}], got {stride}")
    points = [k * stride for k in range(1, num_frames // stride + 1)]
    points[-1] = num_frames
    return DecodingSchedule(tuple(points), stride)


def make_decoding_points_by_count(num_frames: int, count: int) -> DecodingSchedule:
    """``count`` evenly spaced points ending at the final frame."""
    if count < 1 or count > num_frames:
        raise InvalidArgumentError(f"count must lie in [1, {num_frames}], got {count}")
    points = sorted({max(1, round(i * num_frames / count)) for i in range(1, count + 1)})
    return DecodingSchedule(tuple(points), max(1, num_frames // count))


def target_set(events: Iterable[TimedEvent], point: int, fps: float) -> list[TimedEvent]:
    """Events that have finished by frame ``point``."""
    cutoff = point / fps
    return sort_events(e for e in events if e.end_sec <= cutoff)


def split_prefix_target(events: Sequence[TimedEvent], seed=None):
    """Split at a uniformly drawn index ``j`` in 1..len(events).

    The prefix holds the events before ``j`` and may be empty; the target is
    never empty.
    """
    events = list(events)
    if not events:
        return [], []
    j = int(_rng(seed).integers(1, len(events) + 1))
    return events[: j - 1], events[j - 1 :]


def augment_prefix(prefix: Sequence[TimedEvent], target: Sequence[TimedEvent],
                   drop_prob: float = DEFAULT_DROP_PROB, seed=None):
    """Move each prefix event to the target with probability ``drop_prob``."""
    if not 0.0 <= drop_prob <= 1.0:
        raise InvalidArgumentError(f"drop_prob must lie in [0, 1], got {drop_prob}")
    prefix = list(prefix)
    if not prefix:
        return [], sort_events(target)
    moved = _rng(seed).random(len(prefix)) < drop_prob
    kept = [e for e, m in zip(prefix, moved) if not m]
    dropped = [e for e, m in zip(prefix, moved) if m]
    return kept, sort_events(dropped + list(target))


def build_prefix_tokens(predictions: Iterable[TimedEvent], mode: str = DEFAULT_PREFIX_MODE,
                        spec: VocabSpec | None = None) -> list[int]:
    if mode not in PREFIX_MODES:
        raise InvalidArgumentError(f"unknown prefix mode {mode!r}")
    if mode == "none":
        return []
    events = sort_events(predictions)
    if mode == "captions":
        return [w for e in events for w in e.words]
    if spec is None:
        raise InvalidArgumentError("captions_and_time needs a vocabulary spec")
    return encode_events(events, spec)


def accumulate_predictions(previous: Iterable[TimedEvent], new: Iterable[TimedEvent],
                           spec: VocabSpec) -> list[TimedEvent]:
    """Start-sorted union that drops exact repeats (same words, same time bins)."""
    seen = set()
    out = []
    for ev in list(previous) + list(new):
        key = (ev.words, quantize_time(ev.start_sec, spec), quantize_time(ev.end_sec, spec))
        if key in seen:
            continue
        seen.add(key)
        out.append(ev)
    return sort_events(out)


def make_decoding_examples(events: Sequence[TimedEvent], schedule: DecodingSchedule, fps: float,
                           seed=None, augment: bool = True,
                           drop_prob: float = DEFAULT_DROP_PROB) -> list[DecodingExample]:
    """Training examples for every decoding point of one video."""
    rng = _rng(seed)
    examples = []
    for point in schedule:
        finished = target_set(events, point, fps)
        prefix, target = split_prefix_target(finished, rng)
        if augment:
            prefix, target = augment_prefix(prefix, target, drop_prob, rng)
        examples.append(DecodingExample(point, tuple(prefix), tuple(target)))
    return examples

