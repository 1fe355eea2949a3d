"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed again in the pytest
terminal summary.
"""

import json
import random
import time
from collections import Counter

import numpy as np
import pytest

from acceptance_log import record
from oracles import brute_cider_d, enumerate_soda
from streamcap.cli import main
from streamcap.codec import TimedEvent, VocabSpec, decode_tokens, encode_events
from streamcap.grad import random_instance
from streamcap.formats import write_stream
from streamcap.memory import (
    MemoryConfig,
    MemoryState,
    TokenStream,
    init_memory,
    oracle_weighted_kmeans,
    update_memory,
)
from streamcap.metrics import DEFAULT_THRESHOLDS, build_idf, cider_d, dense_cider, f1_localization, soda_c
from streamcap.scheduler import make_decoding_examples, make_decoding_points, target_set
from streamcap.sim import make_stream_spec, run_experiment, variant_config


def rel_error(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-30))


def test_c01_memory_matches_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, weights_exact = 0.0, True
    for _ in range(200):
        state, frame, cfg = random_instance(rng)
        new = update_memory(state, frame, cfg)
        x = np.concatenate([state.centers, frame]).astype(np.float64)
        w = np.concatenate([state.weights, np.ones(len(frame))]).astype(np.float64)
        centers, weights = oracle_weighted_kmeans(x, w, state.centers, cfg.tau)
        worst = max(worst, rel_error(new.centers.astype(np.float64), centers))
        weights_exact &= np.array_equal(new.weights, weights.astype(np.float32))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and weights_exact and elapsed < 5
    assert record(1, ok, f"max rel err {worst:.2e}, weights exact={weights_exact}, {elapsed:.2f}s")


@pytest.fixture(scope="module")
def long_run():
    """10,000 frames through a K=514 memory, timing every update."""
    k, n_f, dim, n = 514, 257, 16, 10_000
    cfg = MemoryConfig(k=k)
    # a throwaway stream first, so process warm-up does not land in the
    # early timing window
    warm_rng = np.random.default_rng(1)
    warm = init_memory(warm_rng.standard_normal((k // n_f, n_f, dim)).astype(np.float32), cfg)
    for _ in range(1500):
        warm = update_memory(warm, warm_rng.standard_normal((n_f, dim)).astype(np.float32), cfg)
    rng = np.random.default_rng(7)
    first = rng.standard_normal((k // n_f, n_f, dim)).astype(np.float32)
    state = init_memory(first, cfg)
    shapes_ok, conserved, fallback_frames = True, True, 0
    latency = np.zeros(n)
    for t in range(k // n_f, n):
        frame = rng.standard_normal((n_f, dim)).astype(np.float32)
        before = float(state.weights.astype(np.float64).sum())
        t0 = time.perf_counter()
        state = update_memory(state, frame, cfg)
        latency[t] = time.perf_counter() - t0
        shapes_ok &= state.centers.shape == (k, dim)
        total = float(state.weights.astype(np.float64).sum())
        if state.fallbacks:
            fallback_frames += 1
            continue
        conserved &= total == before + n_f
        if fallback_frames == 0:
            conserved &= total == k + n_f * (t + 1 - k // n_f)
    return dict(n=n, shapes_ok=shapes_ok, conserved=conserved, fallbacks=fallback_frames, latency=latency)


def test_c02_bounded_memory_and_conservation(long_run):
    rate = long_run["fallbacks"] / long_run["n"]
    ok = long_run["shapes_ok"] and long_run["conserved"] and rate < 0.01
    assert record(2, ok, f"shape fixed={long_run['shapes_ok']}, conserved={long_run['conserved']}, "
                         f"fallback frames={long_run['fallbacks']} ({rate:.2%})")


def test_c03_constant_per_frame_cost(long_run):
    lat = long_run["latency"]
    early, late = lat[100:1100].mean(), lat[9000:10000].mean()
    ratio = late / early
    ok = abs(ratio - 1) <= 0.2
    assert record(3, ok, f"early {early * 1e3:.2f} ms, late {late * 1e3:.2f} ms, ratio {ratio:.3f}")


def test_c04_gradcheck(capsys):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--instances", "100"])
    elapsed = time.perf_counter() - t0
    line = capsys.readouterr().out.strip()
    err = float(line.split()[0].split("=")[1])
    ok = code == 0 and err < 1e-3 and elapsed < 10
    assert record(4, ok, f"{line} ({elapsed:.2f}s)")


def test_c05_hand_instances():
    two = update_memory(MemoryState(np.array([[0.0], [10.0]], np.float32), np.ones(2, np.float32), 1),
                        np.array([[2.0], [12.0]], np.float32), MemoryConfig(k=2, tau=1))
    one = update_memory(MemoryState(np.array([[0.0]], np.float32), np.array([9.0], np.float32), 9),
                        np.array([[10.0]], np.float32), MemoryConfig(k=1, tau=1))
    ok = (np.array_equal(two.centers[:, 0], [1, 11]) and np.array_equal(two.weights, [2, 2])
          and one.centers[0, 0] == 1.0 and one.weights[0] == 10)
    assert record(5, ok, f"K=2 centers {two.centers[:, 0].tolist()} weights {two.weights.tolist()}; "
                         f"K=1 center {one.centers[0, 0]} weight {one.weights[0]}")


def test_c06_scheduler():
    anchors = (make_decoding_points(64, 32).points == (32, 64)
               and make_decoding_points(64, 21).points == (21, 42, 64))
    rng = random.Random(6)
    failures = 0
    for trial in range(1000):
        events = []
        for _ in range(rng.randint(0, 10)):
            s = rng.randint(0, 62)
            events.append(TimedEvent(float(s), float(min(64, s + rng.randint(1, 30))), (rng.randint(0, 5),)))
        sched = make_decoding_points(64, rng.choice([1, 7, 16, 21, 32, 64]))
        examples = make_decoding_examples(events, sched, 1.0, trial, augment=rng.random() < 0.5)
        for ex in examples:
            finished = target_set(events, ex.point, 1.0)
            both = ex.prefix_events + ex.target_events
            failures += Counter(both) != Counter(finished)
            failures += any(e.end_sec > ex.point for e in both)
            failures += bool(finished) and not ex.target_events
        failures += Counter(examples[-1].prefix_events + examples[-1].target_events) != Counter(events)
    ok = anchors and failures == 0
    assert record(6, ok, f"anchors ok={anchors}, property violations on 1000 sets: {failures}")


def test_c07_codec_round_trip():
    spec = VocabSpec(n_words=50, duration_sec=100.0, n_time_bins=100)
    rng = np.random.default_rng(7)
    worst, words_ok = 0.0, True
    for _ in range(1000):
        events = []
        for _ in range(int(rng.integers(0, 8))):
            a, b = sorted(rng.uniform(0, 100, 2))
            if b - a < 1e-6:
                continue
            events.append(TimedEvent(float(a), float(b), tuple(int(w) for w in rng.integers(0, 50, rng.integers(0, 6)))))
        decoded, diag = decode_tokens(encode_events(events, spec), spec)
        ordered = sorted(events, key=lambda e: (e.start_sec, e.end_sec))
        words_ok &= diag.dropped_fragments == 0 and [e.words for e in decoded] == [e.words for e in ordered]
        for d, e in zip(decoded, ordered):
            worst = max(worst, abs(d.start_sec - e.start_sec), abs(d.end_sec - e.end_sec))
    ok = words_ok and worst <= spec.bin_width
    assert record(7, ok, f"words and order exact={words_ok}, max time error {worst:.3f}s (bin {spec.bin_width}s)")


def test_c08_metrics():
    gts = [TimedEvent(0.0, 10.0, tuple("a man runs over the fence".split())),
           TimedEvent(20.0, 30.0, tuple("the dog jumps over a red ball".split())),
           TimedEvent(40.0, 50.0, tuple("a woman kicks the blue ball".split()))]
    corpus = build_idf(e.words for e in gts)
    dense = dense_cider(gts, gts, corpus)
    identity = all(abs(dense[t] - 10.0) <= 1e-6 for t in DEFAULT_THRESHOLDS)
    identity &= f1_localization(gts, gts)["avg"] == 1.0
    apart = [TimedEvent(e.start_sec + 10.0, e.end_sec + 9.0, e.words) for e in gts]
    zero = dense_cider(apart, gts, corpus)["avg"] == 0.0 and f1_localization(apart, gts)["avg"] == 0.0

    words = "a man woman dog runs jumps over the fence ball kicks red blue".split()
    rng = random.Random(8)
    cider_err = 0.0
    for _ in range(50):
        refs = [[rng.choice(words) for _ in range(rng.randint(1, 8))] for _ in range(rng.randint(2, 6))]
        cand = [rng.choice(words) for _ in range(rng.randint(0, 8))]
        chosen = rng.sample(refs, rng.randint(1, len(refs)))
        cider_err = max(cider_err, abs(cider_d(cand, chosen, build_idf(refs)) - brute_cider_d(cand, chosen, refs)))

    soda_err = 0.0
    for _ in range(100):
        def events(n):
            out = []
            for _ in range(n):
                s = rng.uniform(0, 50)
                out.append((s, s + rng.uniform(1, 20), [rng.choice(words) for _ in range(rng.randint(2, 6))]))
            return out

        preds, truth = events(rng.randint(1, 6)), events(rng.randint(1, 6))
        refs = [g[2] for g in truth]
        got = soda_c([TimedEvent(*p) for p in preds], [TimedEvent(*g) for g in truth], build_idf(refs))
        soda_err = max(soda_err, abs(got - enumerate_soda(preds, truth, refs)))
    ok = identity and zero and cider_err <= 1e-6 and soda_err <= 1e-9
    assert record(8, ok, f"identity={identity}, zero-overlap={zero}, cider oracle err {cider_err:.1e}, "
                         f"soda enumeration err {soda_err:.1e}")


def test_c09_simulation_direction():
    t0 = time.perf_counter()
    at_least, strictly = 0, 0
    sched = make_decoding_points(64, 32)
    for seed in range(20):
        spec = make_stream_spec(num_frames=64, tokens_per_frame=257, dim=16, n_concepts=5, noise_sigma=0.05, seed=seed)
        cfgs = [variant_config(v, 514, 257) for v in ("clustering", "temporal_pool")]
        res = run_experiment(spec, cfgs, sched)
        a, b = res["clustering"].concept_recall, res["temporal_pool"].concept_recall
        at_least += a >= b
        strictly += a > b
    elapsed = time.perf_counter() - t0
    ok = at_least == 20 and strictly >= 10 and elapsed < 60
    assert record(9, ok, f"clustering >= pooling on {at_least}/20, > on {strictly}/20 ({elapsed:.1f}s)")


def test_c10_default_configuration(tmp_path):
    stream_dir, sim_dir = tmp_path / "mem", tmp_path / "sim"
    frames = np.random.default_rng(0).standard_normal((64, 257, 4)).astype(np.float32)
    write_stream(tmp_path / "in.stk", TokenStream(frames, 1.0))
    codes = (main(["stream-memory", str(tmp_path / "in.stk"), "--out", str(stream_dir)]),
             main(["simulate", "--out", str(sim_dir)]))
    expected = {"memory_size": 514, "tau": 2, "momentum": True, "stride": 32, "prefix_mode": "captions",
                "thresholds": [0.3, 0.5, 0.7, 0.9]}
    configs = [json.loads((d / "manifest.json").read_text())["config"] for d in (stream_dir, sim_dir)]
    ok = codes == (0, 0) and all({k: c[k] for k in expected} == expected for c in configs)
    assert record(10, ok, f"exit codes {codes}, recorded {[{k: c[k] for k in expected} for c in configs][0]}")
