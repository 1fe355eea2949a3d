"""Backward pass of the clustering memory.

Given the assignments of one update, the new centers are a fixed linear
combination ``A @ X`` of the concatenated input ``X = [centers; frame]``.
Gradients flow through that map only; the assignments themselves are treated
as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInstanceError, InvalidArgumentError, StateError
from .memory import MemoryConfig, MemoryState, _as_frame, cluster_iterations


@dataclass(frozen=True)
class LinearizedUpdate:
    a: np.ndarray  # (K, K + N_f)
    x: np.ndarray  # (K + N_f, D)
    weights: np.ndarray  # per-token weights of x

    def apply(self, x=None) -> np.ndarray:
        return self.a @ (self.x if x is None else np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    flipped_assignments: int
    trials: int


def _concat(state: MemoryState, frame, cfg: MemoryConfig):
    if state is None or state.size != cfg.k:
        raise StateError("clustering memory is not initialized")
    frame = _as_frame(frame, state.dim)
    x = np.concatenate([state.centers, frame], axis=0).astype(np.float64)
    w = np.concatenate([state.weights, np.ones(frame.shape[0])]).astype(np.float64)
    return x, w


def linearize(x, w, k: int, tau: int, momentum: bool = True):
    """Centers, weights and composed map for an update whose previous centers
    are the first ``k`` rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    centers, weights, a, fallbacks = cluster_iterations(x, w, x[:k], tau, momentum, linear_map=True)
    return centers, weights, LinearizedUpdate(a, x, np.asarray(w, dtype=np.float64)), fallbacks


def forward_linearized(state: MemoryState, frame, cfg: MemoryConfig):
    """Same result as :func:`streamcap.memory.update_memory`, plus the linear
    map that produced the new centers."""
    x, w = _concat(state, frame, cfg)
    centers, weights, lin, fallbacks = linearize(x, w, cfg.k, cfg.tau, cfg.momentum)
    new_state = MemoryState(
        centers.astype(np.float32), weights.astype(np.float32), state.frames_seen + 1, fallbacks
    )
    return new_state, lin


def memory_vjp(lin: LinearizedUpdate, cotangent) -> np.ndarray:
    """Pull a cotangent on the new centers back onto the rows of ``X``."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    k, _ = lin.a.shape
    if cotangent.shape != (k, lin.x.shape[1]):
        raise InvalidArgumentError(f"cotangent shape {cotangent.shape} != ({k}, {lin.x.shape[1]})")
    return lin.a.T @ cotangent


def finite_diff_check(state: MemoryState, frame, cfg: MemoryConfig, epsilon: float = 1e-4,
                      trials: int = 20, seed: int = 0) -> GradCheckReport:
    """Compare :func:`memory_vjp` against central differences.

    Each trial perturbs one random entry of ``X`` by +/- ``epsilon`` and reruns
    the whole update.  Trials where either perturbed run assigns tokens
    differently from the unperturbed one are discarded; for the rest the
    difference quotient of a random projection of the centers is compared with
    the matching entry of the vector-Jacobian product.
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    if trials < 1:
        raise InvalidArgumentError(f"need at least one trial, got {trials}")
    rng = np.random.default_rng(seed)
    x, w = _concat(state, frame, cfg)
    _, _, lin, _ = linearize(x, w, cfg.k, cfg.tau, cfg.momentum)
    max_err = 0.0
    flipped = 0
    for _ in range(trials):
        i = int(rng.integers(x.shape[0]))
        d = int(rng.integers(x.shape[1]))
        v = rng.standard_normal((cfg.k, x.shape[1]))
        outs = []
        for sign in (1.0, -1.0):
            xp = x.copy()
            xp[i, d] += sign * epsilon
            centers, _, lin_p, _ = linearize(xp, w, cfg.k, cfg.tau, cfg.momentum)
            if not np.array_equal(lin_p.a, lin.a):
                break
            outs.append(centers)
        if len(outs) < 2:
            flipped += 1
            continue
        numeric = float(np.sum(v * (outs[0] - outs[1])) / (2.0 * epsilon))
        analytic = float(memory_vjp(lin, v)[i, d])
        scale = max(abs(numeric), abs(analytic), 1e-8)
        max_err = max(max_err, abs(numeric - analytic) / scale)
    if flipped == trials:
        raise DegenerateInstanceError("every perturbation changed the cluster assignments")
    return GradCheckReport(max_err, flipped, trials)


def random_instance(rng: np.random.Generator, max_k: int = 8, max_nf: int = 8, max_dim: int = 4,
                    max_tau: int = 3):
    """Random small (state, frame, cfg) triple for gradient and oracle checks."""
    n_f = int(rng.integers(1, max_nf + 1))
    k = n_f * int(rng.integers(1, max(1, max_k // n_f) + 1))
    dim = int(rng.integers(1, max_dim + 1))
    tau = int(rng.integers(1, max_tau + 1))
    centers = rng.standard_normal((k, dim)).astype(np.float32)
    weights = rng.integers(1, 20, size=k).astype(np.float32)
    frame = rng.standard_normal((n_f, dim)).astype(np.float32)
    state = MemoryState(centers, weights, k // n_f + int(rng.integers(0, 50)))
    return state, frame, MemoryConfig(k=k, tau=tau)
