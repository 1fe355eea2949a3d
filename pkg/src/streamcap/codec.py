"""Timed events as token sequences over a vocabulary extended with time tokens.

Word ids occupy ``[0, n_words)`` and time tokens ``[n_words, n_words +
n_time_bins)``.  One event serializes as ``[start, end, word, ...]`` and a
video's events are concatenated in order of start time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .errors import InvalidArgumentError

DEFAULT_TIME_BINS = 100


@dataclass(frozen=True)
class TimedEvent:
    start_sec: float
    end_sec: float
    words: tuple[Hashable, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not (math.isfinite(self.start_sec) and math.isfinite(self.end_sec)):
            raise InvalidArgumentError("event times must be finite")
        if self.start_sec < 0 or self.start_sec >= self.end_sec:
            raise InvalidArgumentError(f"invalid event interval [{self.start_sec}, {self.end_sec}]")

    @property
    def interval(self) -> tuple[float, float]:
        return self.start_sec, self.end_sec


@dataclass(frozen=True)
class VocabSpec:
    n_words: int
    duration_sec: float
    n_time_bins: int = DEFAULT_TIME_BINS

    def __post_init__(self):
        if self.n_words < 1 or self.n_time_bins < 1:
            raise InvalidArgumentError("vocabulary and time-bin counts must be positive")
        if not self.duration_sec > 0:
            raise InvalidArgumentError(f"duration must be positive, got {self.duration_sec}")

    @property
    def size(self) -> int:
        return self.n_words + self.n_time_bins

    @property
    def bin_width(self) -> float:
        return self.duration_sec / self.n_time_bins

    def is_time(self, token: int) -> bool:
        return self.n_words <= token < self.size


@dataclass
class DecodeDiagnostics:
    dropped_fragments: int = 0
    reordered_times: int = 0


def quantize_time(t_sec: float, spec: VocabSpec) -> int:
    if t_sec < 0 or not math.isfinite(t_sec):
        raise InvalidArgumentError(f"time must be a finite non-negative number, got {t_sec}")
    b = int(math.floor(t_sec / spec.duration_sec * spec.n_time_bins))
    return spec.n_words + min(b, spec.n_time_bins - 1)


def dequantize_time(token: int, spec: VocabSpec) -> float:
    """Center of the time bin encoded by ``token``."""
    if not spec.is_time(token):
        raise InvalidArgumentError(f"token {token} is not a time token")
    return (token - spec.n_words + 0.5) / spec.n_time_bins * spec.duration_sec


def event_time_tokens(event: TimedEvent, spec: VocabSpec) -> tuple[int, int]:
    """Start/end tokens of an event, always with start < end.

    When both ends fall in the same bin the pair is widened by one bin, to
    the right if the event ends in the upper half of that bin and to the left
    otherwise, which keeps both decoded times within one bin of the truth.
    """
    ws = quantize_time(event.start_sec, spec)
    we = quantize_time(event.end_sec, spec)
    if we > ws:
        return ws, we
    lo, hi = spec.n_words, spec.size - 1
    if spec.n_time_bins == 1:
        raise InvalidArgumentError("a single time bin cannot encode start < end")
    bin_start = (ws - spec.n_words) * spec.bin_width
    upper_half = event.end_sec - bin_start >= 0.5 * spec.bin_width
    if (upper_half and ws < hi) or ws == lo:
        return ws, ws + 1
    return ws - 1, ws


def sort_events(events: Iterable[TimedEvent]) -> list[TimedEvent]:
    # sorted() is stable, so equal (start, end) keep their input order
    return sorted(events, key=lambda e: (e.start_sec, e.end_sec))


def encode_events(events: Sequence[TimedEvent], spec: VocabSpec) -> list[int]:
    tokens: list[int] = []
    for ev in sort_events(events):
        if ev.end_sec > spec.duration_sec + 1e-9:
            raise InvalidArgumentError(f"event ends at {ev.end_sec}s, after the video ({spec.duration_sec}s)")
        for word in ev.words:
            if not (isinstance(word, int) and 0 <= word < spec.n_words):
                raise InvalidArgumentError(f"word id {word!r} outside [0, {spec.n_words})")
        tokens.extend(event_time_tokens(ev, spec))
        tokens.extend(ev.words)
    return tokens


def decode_tokens(tokens: Sequence[int], spec: VocabSpec) -> tuple[list[TimedEvent], DecodeDiagnostics]:
    """Parse a possibly malformed token sequence back into events.

    Never raises.  Anything that is not ``time, time, word*`` with an
    increasing pair of times is dropped and counted; out-of-range ids break
    the current group.  Events keep their order in the sequence;
    ``reordered_times`` counts groups that start before their predecessor.
    """
    diag = DecodeDiagnostics()
    events: list[TimedEvent] = []
    group: list[int] = []
    valid = True

    def flush():
        nonlocal group, valid
        if group:
            if valid and len(group) >= 2 and group[0] < group[1]:
                events.append(TimedEvent(
                    dequantize_time(group[0], spec), dequantize_time(group[1], spec), tuple(group[2:])
                ))
            else:
                diag.dropped_fragments += 1
        group, valid = [], True

    for tok in tokens:
        tok = int(tok)
        if spec.is_time(tok):
            if len(group) >= 2 or (group and not valid):
                flush()
            group.append(tok)
        elif 0 <= tok < spec.n_words:
            if len(group) < 2:
                # words without a complete time pair in front of them
                valid = False
            group.append(tok)
        else:
            valid = False
            group.append(tok)
    flush()

    for prev, cur in zip(events, events[1:]):
        if cur.start_sec < prev.start_sec:
            diag.reordered_times += 1
    return events, diag


_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class Vocabulary:
    """Plain word list; a word's id is its line number in the vocabulary file."""

    words: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    UNK = "<unk>"

    def __post_init__(self):
        self.index = {}
        for i, w in enumerate(self.words):
            self.index.setdefault(w, i)

    def __len__(self):
        return len(self.words)

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line.strip() for line in lines])

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for w in tokenize(text):
                seen.setdefault(w, None)
        return cls(sorted(seen))

    def save(self, path):
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    def encode(self, text: str) -> tuple[int, ...]:
        ids = []
        for w in tokenize(text):
            if w in self.index:
                ids.append(self.index[w])
            elif self.UNK in self.index:
                ids.append(self.index[self.UNK])
            else:
                raise InvalidArgumentError(f"word {w!r} is not in the vocabulary")
        return tuple(ids)

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.words[i] for i in ids)
