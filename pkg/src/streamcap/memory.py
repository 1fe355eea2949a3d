"""Fixed-size token memories for streaming video features.

The main variant keeps ``k`` cluster centers and a per-center count of how
many tokens were merged into each one.  Every incoming frame is folded in by
a few weighted K-means iterations over the concatenation of the current
centers and the new tokens, so heavy centers move slowly.

The pooling, EMA, pairwise-merge and concatenation memories are kept as
baselines that share the same state type.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, StateError

logger = logging.getLogger(__name__)

VARIANTS = ("clustering", "ema", "spatial_pool", "temporal_pool", "pairwise_merge", "none")

DEFAULT_MEMORY_SIZE = 514
DEFAULT_ITERATIONS = 2
DEFAULT_EMA_DECAY = 0.9


@dataclass(frozen=True)
class MemoryConfig:
    """Hyperparameters of a streaming memory.

    ``k`` is the number of memory tokens and ``tau`` the number of K-means
    iterations per frame.  ``momentum=False`` switches the center update to a
    plain (unweighted) mean of the assigned tokens.  ``decay`` is only read by
    the ``ema`` variant.
    """

    k: int = DEFAULT_MEMORY_SIZE
    tau: int = DEFAULT_ITERATIONS
    variant: str = "clustering"
    decay: float = DEFAULT_EMA_DECAY
    momentum: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown memory variant {self.variant!r}")
        if self.k < 1:
            raise InvalidArgumentError(f"memory size must be positive, got {self.k}")
        if self.tau < 0:
            raise InvalidArgumentError(f"tau must be non-negative, got {self.tau}")
        if not 0.0 < self.decay < 1.0:
            raise InvalidArgumentError(f"decay must lie in (0, 1), got {self.decay}")

    def init_frames(self, n_f: int) -> int:
        """Number of leading frames consumed by initialization."""
        if self.variant in ("clustering", "pairwise_merge"):
            if self.k % n_f:
                raise InvalidArgumentError(
                    f"memory size {self.k} is not a multiple of tokens per frame {n_f}"
                )
            return self.k // n_f
        return 1


@dataclass
class MemoryState:
    centers: np.ndarray
    weights: np.ndarray
    frames_seen: int
    # empty-cluster fallbacks fired during the update that produced this state
    fallbacks: int = field(default=0, compare=False)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass
class TokenStream:
    """Per-frame token matrices stacked into an array of shape (T, N_f, D)."""

    frames: np.ndarray
    fps: float
    duration_sec: float | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or min(self.frames.shape) < 1:
            raise InvalidArgumentError(f"expected a (T, N_f, D) array, got shape {self.frames.shape}")
        if not self.fps > 0:
            raise InvalidArgumentError(f"fps must be positive, got {self.fps}")
        if self.duration_sec is None:
            self.duration_sec = self.num_frames / self.fps
        elif abs(self.duration_sec - self.num_frames / self.fps) > 1.0 / self.fps:
            raise InvalidArgumentError("duration does not match frame count and fps")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.frames.shape[1]

    @property
    def dim(self) -> int:
        return self.frames.shape[2]

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return self.num_frames


def _as_frame(frame, dim: int | None = None) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 2 or frame.shape[0] < 1 or frame.shape[1] < 1:
        raise InvalidArgumentError(f"a frame must be a non-empty (N_f, D) matrix, got {frame.shape}")
    if dim is not None and frame.shape[1] != dim:
        raise InvalidArgumentError(f"frame has {frame.shape[1]} channels, memory has {dim}")
    if not np.all(np.isfinite(frame)):
        raise InvalidArgumentError("frame contains non-finite values")
    return frame


def pairwise_sq_dist(x, c) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``x`` and ``c``.

    Uses the ``|x|^2 + |c|^2 - 2 x.c`` expansion in float64 and clips the
    rounding noise below zero.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise InvalidArgumentError(f"cannot compare shapes {x.shape} and {c.shape}")
    d = x @ c.T
    d *= -2.0
    d += np.einsum("ij,ij->i", x, x)[:, None]
    d += np.einsum("ij,ij->i", c, c)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def assign(dist) -> np.ndarray:
    """One-hot nearest-center assignment; ties go to the lowest center index."""
    dist = np.asarray(dist)
    if dist.ndim != 2 or dist.shape[1] < 1:
        raise InvalidArgumentError(f"distance matrix must be (n, K) with K >= 1, got {dist.shape}")
    delta = np.zeros(dist.shape, dtype=np.float64)
    delta[np.arange(dist.shape[0]), np.argmin(dist, axis=1)] = 1.0
    return delta


def _nearest(x, centers) -> np.ndarray:
    # |x|^2 is constant per row, so it is dropped before the argmin; the
    # remaining |c|^2 - 2 x.c comes out of a single product of augmented rows
    xa = np.empty((x.shape[0], x.shape[1] + 1))
    xa[:, :-1] = x
    xa[:, -1] = 1.0
    ca = np.empty((centers.shape[0], centers.shape[1] + 1))
    np.multiply(centers, -2.0, out=ca[:, :-1])
    ca[:, -1] = np.einsum("ij,ij->i", centers, centers)
    return np.argmin(xa @ ca.T, axis=1)


def cluster_iterations(x, w, centers, tau: int, momentum: bool = True, linear_map: bool = False):
    """Run ``tau`` weighted K-means iterations over tokens ``x`` with weights ``w``.

    Returns ``(centers, weights, A, fallbacks)`` in float64.  ``fallbacks``
    counts the (iteration, center) pairs that received no weight and kept
    their previous value.  ``A`` is None unless ``linear_map`` is set; when
    ``centers`` are the first rows of ``x`` (the streaming case) it satisfies
    ``centers == A @ x``.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    k, n = centers.shape[0], x.shape[0]
    weights = w[:k].copy()
    a = None
    if linear_map:
        a = np.zeros((k, n))
        a[:, :k] = np.eye(k)
    fallbacks = 0
    for _ in range(tau):
        labels = _nearest(x, centers)
        new_weights = np.bincount(labels, weights=w, minlength=k)
        counts = np.bincount(labels, minlength=k)
        empty = new_weights <= 0
        coef = w if momentum else np.ones(n)
        denom = new_weights if momentum else counts.astype(np.float64)
        denom = np.where(empty, 1.0, denom)
        scale = coef / denom[labels]
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, x * scale[:, None])
        if linear_map:
            new_a = np.zeros((k, n))
            new_a[labels, np.arange(n)] = scale
        if empty.any():
            fallbacks += int(empty.sum())
            new_weights[empty] = weights[empty]
            new_centers[empty] = centers[empty]
            if linear_map:
                new_a[empty] = a[empty]
        if linear_map:
            a = new_a
        weights, centers = new_weights, new_centers
    return centers, weights, a, fallbacks


def init_memory(frames: Sequence, cfg: MemoryConfig) -> MemoryState:
    """Build the initial memory from the leading frames of a stream.

    Clustering and pairwise-merge memories take exactly ``k / N_f`` frames and
    stack their tokens verbatim with unit weights.  The other variants start
    from a single frame.
    """
    frames = [_as_frame(f) for f in frames]
    if not frames:
        raise InvalidArgumentError("no frames given")
    n_f, dim = frames[0].shape
    if any(f.shape != (n_f, dim) for f in frames):
        raise InvalidArgumentError("frames have inconsistent shapes")
    need = cfg.init_frames(n_f)
    if len(frames) != need:
        raise InvalidArgumentError(f"{cfg.variant} memory needs {need} initial frames, got {len(frames)}")

    if cfg.variant == "ema" and cfg.k != n_f:
        raise InvalidArgumentError(f"ema memory needs k == N_f, got k={cfg.k}, N_f={n_f}")
    if cfg.variant == "spatial_pool":
        centers = frames[0].mean(axis=0, dtype=np.float64)[None, :]
    else:
        centers = np.concatenate(frames, axis=0)
    centers = centers.astype(np.float32)
    return MemoryState(centers, np.ones(centers.shape[0], dtype=np.float32), need)


def update_memory(state: MemoryState, frame, cfg: MemoryConfig) -> MemoryState:
    """Fold one frame of tokens into a clustering memory."""
    if state is None or state.size != cfg.k:
        raise StateError("clustering memory is not initialized")
    frame = _as_frame(frame, state.dim)
    x = np.concatenate([state.centers, frame], axis=0)
    w = np.concatenate([state.weights, np.ones(frame.shape[0], dtype=np.float32)])
    centers, weights, _, fallbacks = cluster_iterations(x, w, state.centers, cfg.tau, cfg.momentum)
    if fallbacks:
        logger.debug("frame %d: %d empty-cluster fallbacks", state.frames_seen + 1, fallbacks)
    return MemoryState(
        centers.astype(np.float32), weights.astype(np.float32), state.frames_seen + 1, fallbacks
    )


def ema_update(state: MemoryState, frame, decay: float = DEFAULT_EMA_DECAY) -> MemoryState:
    if not 0.0 < decay < 1.0:
        raise InvalidArgumentError(f"decay must lie in (0, 1), got {decay}")
    frame = _as_frame(frame, state.dim)
    if frame.shape[0] != state.size:
        raise InvalidArgumentError(f"ema memory holds {state.size} tokens, frame has {frame.shape[0]}")
    centers = decay * state.centers.astype(np.float64) + (1.0 - decay) * frame
    return replace(state, centers=centers.astype(np.float32), frames_seen=state.frames_seen + 1)


def pool_update(state: MemoryState, frame, mode: str) -> MemoryState:
    """Spatial pooling appends the frame's mean token; temporal pooling keeps
    a running per-position mean over all frames seen."""
    frame = _as_frame(frame, state.dim)
    if mode == "spatial":
        token = frame.mean(axis=0, dtype=np.float64).astype(np.float32)
        return MemoryState(
            np.vstack([state.centers, token]),
            np.append(state.weights, np.float32(1.0)),
            state.frames_seen + 1,
        )
    if mode == "temporal":
        if frame.shape != state.centers.shape:
            raise InvalidArgumentError(f"frame shape {frame.shape} != memory shape {state.centers.shape}")
        n = state.frames_seen + 1
        mean = state.centers.astype(np.float64)
        mean += (frame - mean) / n
        return replace(state, centers=mean.astype(np.float32), frames_seen=n)
    raise InvalidArgumentError(f"unknown pooling mode {mode!r}")


def concat_update(state: MemoryState, frame) -> MemoryState:
    frame = _as_frame(frame, state.dim)
    return MemoryState(
        np.vstack([state.centers, frame]),
        np.concatenate([state.weights, np.ones(frame.shape[0], dtype=np.float32)]),
        state.frames_seen + 1,
    )


class _MergeBank:
    """Token bank with a cached pairwise distance matrix (diagonal = inf)."""

    def __init__(self, tokens: np.ndarray, weights: np.ndarray):
        self.tokens = np.asarray(tokens, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.dist = pairwise_sq_dist(self.tokens, self.tokens)
        np.fill_diagonal(self.dist, np.inf)

    def append(self, token: np.ndarray, weight: float = 1.0):
        row = pairwise_sq_dist(token[None, :], self.tokens)[0]
        n = len(self.tokens)
        dist = np.empty((n + 1, n + 1))
        dist[:n, :n] = self.dist
        dist[n, :n] = dist[:n, n] = row
        dist[n, n] = np.inf
        self.dist = dist
        self.tokens = np.vstack([self.tokens, token])
        self.weights = np.append(self.weights, weight)

    def merge_closest(self):
        n = len(self.tokens)
        i, j = divmod(int(np.argmin(self.dist)), n)
        i, j = min(i, j), max(i, j)
        wi, wj = self.weights[i], self.weights[j]
        self.tokens[i] = (wi * self.tokens[i] + wj * self.tokens[j]) / (wi + wj)
        self.weights[i] = wi + wj
        keep = np.arange(n) != j
        self.tokens = self.tokens[keep]
        self.weights = self.weights[keep]
        self.dist = self.dist[np.ix_(keep, keep)]
        row = pairwise_sq_dist(self.tokens[i][None, :], self.tokens)[0]
        self.dist[i, :] = row
        self.dist[:, i] = row
        self.dist[i, i] = np.inf


def merge_to_size(centers, weights, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Repeatedly merge the closest pair of rows until at most ``k`` remain.

    The merged row takes the lower index and the weighted mean of the pair;
    its weight is the sum of the two.
    """
    bank = _MergeBank(centers, weights)
    while len(bank.tokens) > k:
        bank.merge_closest()
    return bank.tokens, bank.weights


def pairwise_merge_update(state: MemoryState, frame, k: int) -> MemoryState:
    frame = _as_frame(frame, state.dim)
    if state.size != k:
        raise StateError(f"pairwise-merge memory holds {state.size} tokens, expected {k}")
    bank = _MergeBank(state.centers, state.weights)
    for token in frame.astype(np.float64):
        bank.append(token)
        while len(bank.tokens) > k:
            bank.merge_closest()
    return MemoryState(
        bank.tokens.astype(np.float32), bank.weights.astype(np.float32), state.frames_seen + 1
    )


def update(state: MemoryState, frame, cfg: MemoryConfig) -> MemoryState:
    """Dispatch one frame to the update rule of ``cfg.variant``."""
    if cfg.variant == "clustering":
        return update_memory(state, frame, cfg)
    if cfg.variant == "ema":
        return ema_update(state, frame, cfg.decay)
    if cfg.variant == "spatial_pool":
        return pool_update(state, frame, "spatial")
    if cfg.variant == "temporal_pool":
        return pool_update(state, frame, "temporal")
    if cfg.variant == "pairwise_merge":
        return pairwise_merge_update(state, frame, cfg.k)
    return concat_update(state, frame)


def oracle_weighted_kmeans(x, w, init_centers, tau: int, momentum: bool = True):
    """Reference implementation of the clustering update with explicit loops.

    Mirrors :func:`cluster_iterations` (same tie-breaking and empty-cluster
    rule) without any vectorization.  Only meant for cross-checking.
    """
    x = [[float(v) for v in row] for row in np.asarray(x)]
    w = [float(v) for v in np.asarray(w)]
    centers = [[float(v) for v in row] for row in np.asarray(init_centers)]
    k = len(centers)
    if len(x) != len(w) or any(len(row) != len(centers[0]) for row in x):
        raise InvalidArgumentError("inconsistent oracle inputs")
    dim = len(centers[0])
    weights = w[:k]
    for _ in range(tau):
        labels = []
        for row in x:
            best, best_d = 0, None
            for j, c in enumerate(centers):
                d = 0.0
                for a, b in zip(row, c):
                    d += (a - b) * (a - b)
                if best_d is None or d < best_d:
                    best, best_d = j, d
            labels.append(best)
        new_centers, new_weights = [], []
        for j in range(k):
            members = [i for i, lab in enumerate(labels) if lab == j]
            total = sum(w[i] for i in members)
            if total <= 0:
                new_centers.append(list(centers[j]))
                new_weights.append(weights[j])
                continue
            coef = {i: (w[i] / total if momentum else 1.0 / len(members)) for i in members}
            new_centers.append([sum(coef[i] * x[i][d] for i in members) for d in range(dim)])
            new_weights.append(total)
        centers, weights = new_centers, new_weights
    return np.array(centers, dtype=np.float64).reshape(k, dim), np.array(weights, dtype=np.float64)


class StreamingMemory:
    """Stateful driver that buffers the leading frames, initializes the
    memory, then applies one update per incoming frame."""

    def __init__(self, cfg: MemoryConfig):
        self.cfg = cfg
        self.state: MemoryState | None = None
        self.fallback_frames = 0
        self._buffer: list[np.ndarray] = []

    @property
    def ready(self) -> bool:
        return self.state is not None

    @property
    def frames_seen(self) -> int:
        return self.state.frames_seen if self.state is not None else len(self._buffer)

    def push(self, frame) -> MemoryState | None:
        frame = _as_frame(frame)
        if self.state is None:
            self._buffer.append(frame)
            if len(self._buffer) == self.cfg.init_frames(frame.shape[0]):
                self.state = init_memory(self._buffer, self.cfg)
                self._buffer = []
            return self.state
        self.state = update(self.state, frame, self.cfg)
        if self.state.fallbacks:
            self.fallback_frames += 1
        return self.state

    def extend(self, frames: Iterable) -> MemoryState | None:
        for frame in frames:
            self.push(frame)
        return self.state

    def snapshot(self) -> MemoryState:
        """Current memory; before initialization completes, the buffered frames."""
        if self.state is not None:
            return self.state
        if not self._buffer:
            raise StateError("no frames have been pushed")
        centers = np.concatenate(self._buffer, axis=0)
        return MemoryState(centers, np.ones(len(centers), dtype=np.float32), len(self._buffer))
