"""On-disk formats: token-stream and memory-snapshot binaries, events JSONL.

All binary fields are little-endian.

    token stream:  b"STK1" u32 T  u32 N_f  u32 D  f64 fps  f32[T*N_f*D]
    snapshot:      b"SMEM" u32 K  u32 D  f32[K*D] centers  f32[K] weights
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict
from pathlib import Path

import numpy as np

from .codec import TimedEvent, Vocabulary, tokenize
from .errors import FormatError, InvalidArgumentError
from .memory import MemoryState, TokenStream

STREAM_MAGIC = b"STK1"
SNAPSHOT_MAGIC = b"SMEM"
_STREAM_HEADER = struct.Struct("<4sIIId")
_SNAPSHOT_HEADER = struct.Struct("<4sII")


def write_stream(path, stream: TokenStream):
    t, n_f, d = stream.frames.shape
    with open(path, "wb") as fh:
        fh.write(_STREAM_HEADER.pack(STREAM_MAGIC, t, n_f, d, float(stream.fps)))
        fh.write(np.ascontiguousarray(stream.frames, dtype="<f4").tobytes())


def read_stream(path) -> TokenStream:
    data = Path(path).read_bytes()
    if len(data) < _STREAM_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, t, n_f, d, fps = _STREAM_HEADER.unpack_from(data)
    if magic != STREAM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _STREAM_HEADER.size + 4 * t * n_f * d
    if len(data) != expected or min(t, n_f, d) == 0:
        raise FormatError(f"{path}: header says {t}x{n_f}x{d} but file has {len(data)} bytes")
    frames = np.frombuffer(data, dtype="<f4", offset=_STREAM_HEADER.size).reshape(t, n_f, d)
    try:
        return TokenStream(frames.astype(np.float32), fps)
    except InvalidArgumentError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_snapshot(path, state: MemoryState):
    k, d = state.centers.shape
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, k, d))
        fh.write(np.ascontiguousarray(state.centers, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(state.weights, dtype="<f4").tobytes())


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _SNAPSHOT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, k, d = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if len(data) != _SNAPSHOT_HEADER.size + 4 * (k * d + k):
        raise FormatError(f"{path}: size does not match K={k}, D={d}")
    values = np.frombuffer(data, dtype="<f4", offset=_SNAPSHOT_HEADER.size).astype(np.float32)
    return values[: k * d].reshape(k, d), values[k * d :]


def _words(caption: str, vocab: Vocabulary | None):
    return vocab.encode(caption) if vocab is not None else tuple(tokenize(caption))


def read_events(path, vocab: Vocabulary | None = None) -> dict[str, list[TimedEvent]]:
    """Events grouped by video id.

    Without a vocabulary, captions stay as lists of normalized word strings.
    Raises :class:`FormatError` naming the offending line.
    """
    out: dict[str, list[TimedEvent]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ev = TimedEvent(float(rec["start"]), float(rec["end"]), _words(str(rec["caption"]), vocab))
                out[str(rec["video_id"])].append(ev)
            except (ValueError, KeyError, TypeError, InvalidArgumentError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return dict(out)


def event_record(video_id: str, ev: TimedEvent, vocab: Vocabulary | None = None) -> dict:
    caption = vocab.decode(ev.words) if vocab is not None else " ".join(map(str, ev.words))
    return {"video_id": video_id, "start": ev.start_sec, "end": ev.end_sec, "caption": caption}


def write_events(path, events_by_video, vocab: Vocabulary | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        for vid, events in events_by_video.items():
            for ev in events:
                fh.write(json.dumps(event_record(vid, ev, vocab)) + "\n")
