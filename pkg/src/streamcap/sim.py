"""Planted-cluster token streams and an oracle captioner.

Each frame's tokens are noisy copies of one concept center (or of the
background center between events).  The oracle decoder reads concepts back
out of a memory by nearest-center lookup, which makes the whole streaming
pipeline checkable without a learned model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import TimedEvent, VocabSpec, Vocabulary
from .errors import InvalidArgumentError
from .memory import MemoryConfig, MemoryState, StreamingMemory, TokenStream
from .metrics import DEFAULT_THRESHOLDS, EvalReport, evaluate
from .scheduler import DecodingSchedule, accumulate_predictions

BACKGROUND = -1

_VERBS = ["opens", "cuts", "pours", "lifts", "throws", "paints", "washes", "folds", "kicks", "stirs"]
_NOUNS = ["door", "bread", "water", "box", "ball", "fence", "car", "shirt", "can", "soup"]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def concept_caption(concept: int) -> str:
    verb = _VERBS[concept % len(_VERBS)]
    noun = _NOUNS[(concept // len(_VERBS)) % len(_NOUNS)]
    return f"a person {verb} the {noun} {concept}"


@dataclass
class StreamSpec:
    num_frames: int
    tokens_per_frame: int
    dim: int
    events: list[tuple[int, int, int]]  # (start_frame, end_frame exclusive, concept)
    concepts: dict[int, np.ndarray]  # includes BACKGROUND
    noise_sigma: float
    seed: int
    fps: float = 1.0

    def validate(self):
        if min(self.num_frames, self.tokens_per_frame, self.dim) < 1 or self.noise_sigma < 0:
            raise InvalidArgumentError("stream sizes must be positive and noise non-negative")
        if BACKGROUND not in self.concepts:
            raise InvalidArgumentError("a background concept is required")
        ordered = sorted(self.events)
        for s, e, c in ordered:
            if not 0 <= s < e <= self.num_frames:
                raise InvalidArgumentError(f"event [{s}, {e}) outside [0, {self.num_frames}]")
            if c not in self.concepts or c == BACKGROUND:
                raise InvalidArgumentError(f"event uses unknown concept {c}")
        for (_, e1, _), (s2, _, _) in zip(ordered, ordered[1:]):
            if s2 < e1:
                raise InvalidArgumentError("events overlap")
        gap = min_gap(self.concepts)
        if len(self.concepts) > 1 and not gap > 6 * self.noise_sigma:
            raise InvalidArgumentError(f"concepts {gap:.3g} apart are not separable at noise {self.noise_sigma}")


def min_gap(concepts: dict[int, np.ndarray]) -> float:
    vecs = list(concepts.values())
    if len(vecs) < 2:
        return float("inf")
    return min(float(np.linalg.norm(a - b)) for a, b in itertools.combinations(vecs, 2))


@dataclass
class OracleCodebook:
    centers: dict[int, np.ndarray]
    captions: dict[int, tuple[int, ...]]
    vocab: Vocabulary
    radius: float

    @classmethod
    def from_spec(cls, spec: StreamSpec) -> "OracleCodebook":
        ids = sorted(c for c in spec.concepts if c != BACKGROUND)
        texts = {c: concept_caption(c) for c in ids}
        vocab = Vocabulary.build(texts.values())
        captions = {c: vocab.encode(t) for c, t in texts.items()}
        if len(set(captions.values())) != len(captions):
            raise InvalidArgumentError("concept captions are not unique")
        gap = min_gap(spec.concepts)
        radius = 3 * spec.noise_sigma * np.sqrt(spec.dim) + (gap / 2 if np.isfinite(gap) else 0.0)
        return cls(dict(spec.concepts), captions, vocab, float(radius))

    def nearest(self, vectors) -> list[int | None]:
        """Concept id of each row, or None when no concept is within the radius."""
        ids = list(self.centers)
        table = np.stack([self.centers[c] for c in ids]).astype(np.float64)
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        dist = np.sqrt(((vectors[:, None, :] - table[None, :, :]) ** 2).sum(-1))
        best = np.argmin(dist, axis=1)
        return [ids[b] if dist[r, b] <= self.radius else None for r, b in enumerate(best)]

    def concept_of(self, words) -> int | None:
        for c, caption in self.captions.items():
            if caption == tuple(words):
                return c
        return None


def make_stream_spec(num_frames: int = 64, tokens_per_frame: int = 4, dim: int = 8, n_concepts: int = 5,
                     noise_sigma: float = 0.05, seed: int = 0, fps: float = 1.0) -> StreamSpec:
    """Random separable concepts on the unit sphere around a background at the
    origin, laid out as consecutive events separated by background gaps."""
    rng = make_rng(seed)
    if n_concepts < 1 or num_frames < 2 * n_concepts:
        raise InvalidArgumentError(f"cannot lay out {n_concepts} events in {num_frames} frames")
    concepts = None
    for _ in range(1000):
        dirs = rng.standard_normal((n_concepts, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cand = {BACKGROUND: np.zeros(dim), **{c: dirs[c] for c in range(n_concepts)}}
        if min_gap(cand) > 6 * noise_sigma:
            concepts = cand
            break
    if concepts is None:
        raise InvalidArgumentError(f"no separable layout for {n_concepts} concepts in {dim} dimensions")
    order = rng.permutation(n_concepts)
    slot = num_frames // n_concepts
    events = []
    for i, c in enumerate(order):
        lead = 1 + int(rng.integers(0, max(1, slot // 3)))
        events.append((i * slot + lead, (i + 1) * slot, int(c)))
    spec = StreamSpec(num_frames, tokens_per_frame, dim, events, concepts, noise_sigma, seed, fps)
    spec.validate()
    return spec


def gen_stream(spec: StreamSpec) -> tuple[TokenStream, list[TimedEvent]]:
    spec.validate()
    rng = make_rng(spec.seed + 1)
    labels = np.full(spec.num_frames, BACKGROUND)
    for s, e, c in spec.events:
        labels[s:e] = c
    centers = np.stack([spec.concepts[c] for c in labels])
    noise = rng.standard_normal((spec.num_frames, spec.tokens_per_frame, spec.dim))
    frames = centers[:, None, :] + spec.noise_sigma * noise
    codebook = OracleCodebook.from_spec(spec)
    gts = [
        TimedEvent(s / spec.fps, e / spec.fps, codebook.captions[c]) for s, e, c in sorted(spec.events)
    ]
    return TokenStream(frames.astype(np.float32), spec.fps), gts


class ConceptTracker:
    """First and last frame at which each concept was the frame's label."""

    def __init__(self, codebook: OracleCodebook):
        self.codebook = codebook
        self.first: dict[int, int] = {}
        self.last: dict[int, int] = {}
        self.current: int | None = None

    def observe(self, t: int, frame):
        label = self.codebook.nearest(np.asarray(frame, dtype=np.float64).mean(axis=0))[0]
        self.current = label
        if label is None or label == BACKGROUND:
            return
        self.first.setdefault(label, t)
        self.last[label] = t


def detect_concepts(centers, codebook: OracleCodebook) -> set[int]:
    return {c for c in codebook.nearest(centers) if c is not None and c != BACKGROUND}


def oracle_decode(memory: MemoryState, codebook: OracleCodebook, point: int, history: set[int],
                  tracker: ConceptTracker, fps: float = 1.0, final: bool = False) -> list[TimedEvent]:
    """Captions for concepts present in the memory that have finished by
    ``point`` and were not emitted before."""
    out = []
    for c in sorted(detect_concepts(memory.centers, codebook) - history):
        if c not in tracker.first:
            continue
        if not final and tracker.current == c:
            continue
        out.append(TimedEvent(tracker.first[c] / fps, (tracker.last[c] + 1) / fps, codebook.captions[c]))
    return out


def variant_config(variant: str, k: int, tokens_per_frame: int, tau: int = 2, momentum: bool = True,
                   decay: float = 0.9) -> MemoryConfig:
    if variant in ("ema", "temporal_pool"):
        k = tokens_per_frame
    return MemoryConfig(k=k, tau=tau, variant=variant, decay=decay, momentum=momentum)


@dataclass
class ExperimentResult:
    predictions: list[TimedEvent]
    report: EvalReport
    concept_recall: float
    detected: set[int] = field(default_factory=set)


def run_pipeline(stream: TokenStream, gts: Sequence[TimedEvent], codebook: OracleCodebook,
                 cfg: MemoryConfig, schedule: DecodingSchedule,
                 thresholds=DEFAULT_THRESHOLDS) -> ExperimentResult:
    mem = StreamingMemory(cfg)
    tracker = ConceptTracker(codebook)
    spec = VocabSpec(len(codebook.vocab), stream.duration_sec)
    points = set(schedule.points)
    preds: list[TimedEvent] = []
    history: set[int] = set()
    for t, frame in enumerate(stream):
        mem.push(frame)
        tracker.observe(t, frame)
        if t + 1 in points:
            new = oracle_decode(mem.snapshot(), codebook, t + 1, history, tracker, stream.fps,
                                final=t + 1 == stream.num_frames)
            history.update(codebook.concept_of(e.words) for e in new)
            preds = accumulate_predictions(preds, new, spec)
    truth = {codebook.concept_of(e.words) for e in gts}
    recall = len(history & truth) / len(truth) if truth else 1.0
    report = evaluate({"sim": preds}, {"sim": list(gts)}, thresholds)
    return ExperimentResult(preds, report, recall, history)


def run_experiment(spec: StreamSpec, variants: Sequence[MemoryConfig], schedule: DecodingSchedule,
                   thresholds=DEFAULT_THRESHOLDS) -> dict[str, ExperimentResult]:
    """Run the streaming pipeline once per memory configuration."""
    stream, gts = gen_stream(spec)
    codebook = OracleCodebook.from_spec(spec)
    return {cfg.variant: run_pipeline(stream, gts, codebook, cfg, schedule, thresholds) for cfg in variants}
