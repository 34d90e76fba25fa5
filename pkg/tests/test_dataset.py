import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from myoknn.dataset import (REST, StreamTrial, SynthConfig, TrainingSet, default_patterns,
                            dumps_csv, load_csv, load_trial_csv, magnitude, normalize,
                            normalize_rows, save_csv, save_trial_csv, synthesize,
                            synthesize_raw)
from myoknn.errors import ConfigurationError, ParseError, StructuralError

HEADER = "t,ch0,ch1,ch2,ch3,ch4,ch5,ch6,ch7,label,block\n"

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_magnitude_examples():
    assert magnitude(np.ones(8)) == 1.0
    assert magnitude(np.zeros(8)) == 0.0
    assert magnitude([0.2, 0.4, 0, 0, 0, 0, 0, 0.2]) == pytest.approx(0.1, abs=1e-15)


def test_magnitude_is_floored_at_zero():
    assert magnitude(np.full(8, -1.0)) == 0.0


def test_normalize_examples():
    assert np.array_equal(normalize(np.full(8, 2.0)), np.ones(8))
    assert np.array_equal(normalize(np.zeros(8)), np.zeros(8))
    x = np.array([4, 0, 0, 0, 0, 0, 0, 4], dtype=float)
    assert np.array_equal(normalize(x), x)


def test_normalize_rows_flags_subfloor():
    X = np.array([[2.0] * 8, [0.0] * 8, [1e-12] * 8])
    out, sub = normalize_rows(X)
    assert sub.tolist() == [False, True, True]
    assert np.array_equal(out[0], np.ones(8))
    assert np.array_equal(out[1:], X[1:])


@settings(max_examples=200, deadline=None)
@given(arrays(float, 8, elements=st.floats(0.01, 100)), st.floats(0.01, 100))
def test_normalize_scale_invariant(x, c):
    np.testing.assert_allclose(normalize(c * x), normalize(x), rtol=1e-12)
    assert magnitude(normalize(x)) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(float, (5, 8), elements=finite))
def test_normalize_rows_matches_normalize(X):
    out, _ = normalize_rows(X)
    for i in range(5):
        np.testing.assert_array_equal(out[i], normalize(X[i]))


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8", newline="")
    return p


def test_load_header_only_is_empty(tmp_path):
    ts = load_csv(_write(tmp_path, HEADER))
    assert len(ts) == 0
    assert ts.channel_count == 8
    assert ts.features.shape == (0, 8)


def test_load_handcrafted_two_class(tmp_path):
    text = (HEADER
            + "0,0.01,0.02,0.01,0,0,0,0.01,0.02,rs,0\n"
            + "0.005,0.02,0.01,0,0.01,0,0.02,0,0.01,rs,0\n"
            + "0.01,0.9,0.8,0.1,0.1,0.1,0.1,0.1,0.7,pw,1\n"
            + "0.015,0.8,0.9,0.2,0.1,0.1,0.1,0.1,0.6,pw,1\n")
    ts = load_csv(_write(tmp_path, text))
    assert ts.class_list == ("rs", "pw")
    assert ts.block_ids == [0, 1]
    assert ts.block_label(1) == "pw"
    assert ts.features[2, 0] == 0.9
    assert dumps_csv(ts) == text


def test_round_trip(tmp_path):
    ts, _ = synthesize(SynthConfig(samples_per_block=10, blocks_per_class=2), seed=5)
    p = tmp_path / "a.csv"
    save_csv(ts, p)
    again = load_csv(p)
    q = tmp_path / "b.csv"
    save_csv(again, q)
    assert p.read_bytes() == q.read_bytes()
    assert again.labels == ts.labels
    np.testing.assert_allclose(again.features, ts.features, rtol=1e-8)


@pytest.mark.parametrize("row,line", [
    ("0,1,1,1,1,1,1,1,x,pw,0\n", 2),
    ("0,1,1,1,1,1,1,1,1,pw\n", 2),
    ("0,1,1,1,1,1,1,1,1,p w,0\n", 2),
    ("0,1,1,1,1,1,1,1,1,pw,zero\n", 2),
    ("0,1,1,1,1,1,1,1,1,pw,-1\n", 2),
])
def test_parse_errors_report_line(tmp_path, row, line):
    with pytest.raises(ParseError, match=f"line {line}"):
        load_csv(_write(tmp_path, HEADER + row))


def test_mixed_label_block_rejected(tmp_path):
    text = HEADER + "0,1,1,1,1,1,1,1,1,pw,0\n" + "0,1,1,1,1,1,1,1,1,pn,0\n"
    with pytest.raises(ParseError, match="line 3"):
        load_csv(_write(tmp_path, text))


def test_bad_header(tmp_path):
    with pytest.raises(ParseError, match="line 1"):
        load_csv(_write(tmp_path, "t,a,b,label,block\n"))


def test_training_set_validation():
    with pytest.raises(StructuralError):
        TrainingSet(np.zeros((2, 8)), ("pw",), [0])
    with pytest.raises(StructuralError):
        TrainingSet(np.zeros((2, 8)), ("pw", "pn"), [0, 0])
    with pytest.raises(StructuralError):
        TrainingSet(np.zeros((1, 8)), ("a,b",), [0])


def test_training_set_is_read_only():
    ts = TrainingSet(np.ones((2, 8)), ("pw", "pw"), [0, 0])
    with pytest.raises(ValueError):
        ts.features[0, 0] = 3.0


def test_trial_round_trip(tmp_path):
    tr = StreamTrial("pw", 2 / 3, np.arange(16, dtype=float).reshape(2, 8) / 7)
    p = tmp_path / "t.csv"
    save_trial_csv(tr, p)
    back = load_trial_csv(p)
    assert back.stimulus_label == "pw"
    assert back.stimulus_level == pytest.approx(2 / 3, rel=1e-8)
    np.testing.assert_allclose(back.samples, tr.samples, rtol=1e-8)


def test_trial_level_bounds():
    with pytest.raises(StructuralError):
        StreamTrial("pw", 0.0, np.ones((1, 8)))
    with pytest.raises(StructuralError):
        StreamTrial("pw", 1.5, np.ones((1, 8)))


def test_synthesize_deterministic():
    a = synthesize(seed=9)
    b = synthesize(seed=9)
    assert a[0] == b[0]
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a[1], b[1]))
    c = synthesize(seed=10)
    assert not np.array_equal(a[0].features, c[0].features)


def test_synthesize_noiseless():
    pats = default_patterns()
    cfg = SynthConfig(pats, sigma=0.0, samples_per_block=5, blocks_per_class=2, trial_samples=5)
    ts, trials = synthesize(cfg, seed=1)
    for label, p in pats.items():
        assert np.array_equal(ts.class_rows(label), np.tile(p, (10, 1)))
    assert np.array_equal(ts.class_rows(REST), np.zeros((10, 8)))
    for tr in trials:
        m = magnitude(tr.samples[0])
        if tr.stimulus_level == 1.0:
            assert np.array_equal(tr.samples[0], pats[tr.stimulus_label])
        expect = magnitude(pats[tr.stimulus_label]) * tr.stimulus_level
        assert m == pytest.approx(expect, rel=1e-12)
    third = [tr for tr in trials if tr.stimulus_level == pytest.approx(1 / 3)]
    assert len(third) == len(pats)


def test_synthesize_block_layout():
    cfg = SynthConfig(samples_per_block=3, blocks_per_class=2)
    ts, trials = synthesize(cfg, seed=0)
    assert ts.block_ids == list(range(2 * len(cfg.class_list)))
    for b in ts.block_ids:
        assert ts.block_label(b) == cfg.class_list[b % len(cfg.class_list)]
    assert len(trials) == 3 * (len(cfg.class_list) - 1)


def test_synthesize_raw_envelope_tracks():
    cfg = SynthConfig(sigma=0.0, samples_per_block=4000, blocks_per_class=1, trial_samples=4)
    env, _ = synthesize(cfg, seed=2)
    raw, _ = synthesize_raw(cfg, seed=2)
    assert raw.labels == env.labels
    sel = np.array([l == "pr" for l in raw.labels])
    np.testing.assert_allclose(np.abs(raw.features[sel]).mean(axis=0),
                               env.features[sel][0], rtol=0.05)


def test_synth_config_validation():
    with pytest.raises(ConfigurationError):
        synthesize(SynthConfig(sigma=-1))
    with pytest.raises(ConfigurationError):
        synthesize(SynthConfig(levels=(0.0,)))
    with pytest.raises(ConfigurationError):
        synthesize(SynthConfig(patterns={"pw": [1, 2], "pn": [1, 2, 3]}))
