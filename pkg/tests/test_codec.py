import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamcap.codec import (
    TimedEvent,
    VocabSpec,
    Vocabulary,
    decode_tokens,
    dequantize_time,
    encode_events,
    quantize_time,
    tokenize,
)
from streamcap.errors import InvalidArgumentError

SPEC = VocabSpec(n_words=50, duration_sec=100.0, n_time_bins=100)


def test_quantize_uniform_grid_and_clamp():
    assert quantize_time(0.0, SPEC) == 50
    assert quantize_time(50.0, SPEC) == 100
    assert quantize_time(100.0, SPEC) == 149
    assert quantize_time(1e6, SPEC) == 149


def test_quantize_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        quantize_time(-0.1, SPEC)


def test_dequantize_bin_centers():
    assert dequantize_time(50, SPEC) == 0.5
    assert dequantize_time(149, SPEC) == 99.5
    for bad in (49, 150):
        with pytest.raises(InvalidArgumentError):
            dequantize_time(bad, SPEC)


def test_dequantize_monotone():
    values = [dequantize_time(t, SPEC) for t in range(50, 150)]
    assert all(a < b for a, b in zip(values, values[1:]))


@given(st.floats(0, 100, allow_nan=False))
def test_quantize_round_trip_within_one_bin(t):
    assert abs(dequantize_time(quantize_time(t, SPEC), SPEC) - t) <= SPEC.bin_width


def test_encode_empty_and_sorted():
    assert encode_events([], SPEC) == []
    late = TimedEvent(40.0, 60.0, (3, 4))
    early = TimedEvent(10.0, 20.0, (1,))
    assert encode_events([late, early], SPEC) == [60, 70, 1, 90, 110, 3, 4]


def test_encode_same_bin_event_widened():
    # ends in the upper half of its bin: widened to the right
    assert encode_events([TimedEvent(10.1, 10.8, (1,))], SPEC)[:2] == [60, 61]
    # ends in the lower half: widened to the left
    assert encode_events([TimedEvent(10.1, 10.3, (1,))], SPEC)[:2] == [59, 60]
    # nothing left of bin 0
    assert encode_events([TimedEvent(0.1, 0.2, ())], SPEC) == [50, 51]
    # nothing right of the last bin
    assert encode_events([TimedEvent(99.6, 100.0, ())], SPEC) == [148, 149]


def test_encode_validates_words_and_duration():
    with pytest.raises(InvalidArgumentError):
        encode_events([TimedEvent(1.0, 2.0, (50,))], SPEC)
    with pytest.raises(InvalidArgumentError):
        encode_events([TimedEvent(1.0, 120.0, (1,))], SPEC)


def test_timed_event_invariants():
    with pytest.raises(InvalidArgumentError):
        TimedEvent(5.0, 5.0)
    with pytest.raises(InvalidArgumentError):
        TimedEvent(-1.0, 5.0)


def test_decode_well_formed():
    events, diag = decode_tokens([60, 70, 1, 90, 110, 3, 4], SPEC)
    assert [e.words for e in events] == [(1,), (3, 4)]
    assert events[0].interval == (10.5, 20.5)
    assert diag.dropped_fragments == 0 and diag.reordered_times == 0


def test_decode_trailing_lone_time_token():
    events, diag = decode_tokens([60, 70, 1, 90], SPEC)
    assert len(events) == 1
    assert diag.dropped_fragments == 1


def test_decode_empty():
    events, diag = decode_tokens([], SPEC)
    assert events == [] and diag.dropped_fragments == 0 and diag.reordered_times == 0


@pytest.mark.parametrize("tokens, kept, dropped", [
    ([70, 60, 1], 0, 1),  # end before start
    ([60, 60, 1], 0, 1),  # equal times
    ([1, 2, 60, 70, 3], 1, 1),  # leading words
    ([60, 1, 70, 80, 2], 1, 1),  # word between the two time tokens
    ([60, 70, 999, 80, 90], 1, 1),  # out-of-range id
    ([60, 70], 1, 0),  # zero-word event
])
def test_decode_malformed_fragments(tokens, kept, dropped):
    events, diag = decode_tokens(tokens, SPEC)
    assert len(events) == kept
    assert diag.dropped_fragments == dropped


def test_decode_counts_out_of_order_groups():
    events, diag = decode_tokens([90, 110, 3, 60, 70, 1], SPEC)
    assert [e.words for e in events] == [(3,), (1,)]
    assert diag.reordered_times == 1


event_lists = st.lists(
    st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False),
              st.lists(st.integers(0, 49), max_size=6)),
    max_size=6,
)


@given(event_lists)
def test_round_trip_property(raw):
    events = [TimedEvent(min(a, b), max(a, b), w) for a, b, w in raw if a != b]
    tokens = encode_events(events, SPEC)
    assert all(0 <= t < SPEC.size for t in tokens)
    starts = [t for i, t in enumerate(tokens) if SPEC.is_time(t) and (i == 0 or not SPEC.is_time(tokens[i - 1]))]
    assert starts == sorted(starts)
    decoded, diag = decode_tokens(tokens, SPEC)
    assert diag.dropped_fragments == 0
    ordered = sorted(events, key=lambda e: (e.start_sec, e.end_sec))
    assert [e.words for e in decoded] == [e.words for e in ordered]
    # same-bin events hugging the first or last half bin cannot be decoded
    # within one bin, since two distinct bin centers are a full bin apart
    for d, e in zip(decoded, ordered):
        edge = e.end_sec - e.start_sec < SPEC.bin_width and (e.end_sec < 0.5 or e.start_sec > 99.5)
        bound = 1.5 * SPEC.bin_width if edge else SPEC.bin_width
        assert abs(d.start_sec - e.start_sec) <= bound
        assert abs(d.end_sec - e.end_sec) <= bound


def test_tokenize_and_vocabulary(tmp_path):
    assert tokenize("A man, walks the DOG!") == ["a", "man", "walks", "the", "dog"]
    vocab = Vocabulary.build(["a man walks", "the dog walks"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.from_file(path)
    assert loaded.words == vocab.words
    ids = loaded.encode("The man walks.")
    assert loaded.decode(ids) == "the man walks"
    with pytest.raises(InvalidArgumentError):
        loaded.encode("cat")
    assert Vocabulary(["<unk>", "a"]).encode("a cat") == (1, 0)


def test_encoded_ids_cover_whole_range():
    rng = np.random.default_rng(0)
    events = [TimedEvent(float(s), float(s) + 0.5, (int(rng.integers(50)),)) for s in range(0, 100, 3)]
    tokens = encode_events(events, SPEC)
    assert max(tokens) < SPEC.size
