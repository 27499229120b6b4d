import json

import numpy as np
import pytest

from speechscrub import (AlignedTranscript, AlignmentFormatError, InvalidInputError,
                         PhonemeInterval, SpectrogramConfig, Waveform,
                         assemble_representation, build_dictionary,
                         frames_for_interval, load_dictionary, parse_alignment,
                         save_dictionary, stft)
from speechscrub.phonemes import (SIL, UNK, frame_labels,
                                  global_average_representation,
                                  representation_for_spectrogram)


def _write_json(tmp_path, payload, name="a.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_parse_single_interval(tmp_path):
    path = _write_json(tmp_path, [{"label": "AH", "start": 0.0, "end": 0.5}])
    transcript = parse_alignment(path)
    assert transcript.audio_duration == 0.5
    assert [iv.label for iv in transcript.intervals] == ["AH"]


def test_parse_gap_inserts_sil(tmp_path):
    path = _write_json(tmp_path, [
        {"label": "AH", "start": 0.0, "end": 0.2},
        {"label": "IY", "start": 0.3, "end": 0.5},
    ])
    transcript = parse_alignment(path)
    labels = [iv.label for iv in transcript.intervals]
    assert labels == ["AH", SIL, "IY"]
    sil = transcript.intervals[1]
    assert sil.start == pytest.approx(0.2) and sil.end == pytest.approx(0.3)


def test_parse_overlap_and_negative_errors(tmp_path):
    overlap = _write_json(tmp_path, [
        {"label": "AH", "start": 0.0, "end": 0.3},
        {"label": "IY", "start": 0.2, "end": 0.5},
    ])
    with pytest.raises(AlignmentFormatError):
        parse_alignment(overlap)
    negative = _write_json(tmp_path, [{"label": "AH", "start": -0.1, "end": 0.3}],
                           name="b.json")
    with pytest.raises(AlignmentFormatError):
        parse_alignment(negative)


def test_parse_dict_form_with_duration(tmp_path):
    path = _write_json(tmp_path, {
        "intervals": [{"label": "AH", "start": 0.0, "end": 0.4}],
        "audio_duration": 1.0,
    })
    transcript = parse_alignment(path)
    assert transcript.audio_duration == 1.0
    assert [iv.label for iv in transcript.intervals] == ["AH", SIL]


def test_parse_textgrid(tmp_path):
    text = '''File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.5
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.5
        intervals: size = 2
        intervals [1]:
            xmin = 0.0
            xmax = 0.25
            text = "AH"
        intervals [2]:
            xmin = 0.25
            xmax = 0.5
            text = "IY"
'''
    path = tmp_path / "a.TextGrid"
    path.write_text(text)
    transcript = parse_alignment(path)
    assert [iv.label for iv in transcript.intervals] == ["AH", "IY"]
    assert transcript.audio_duration == 0.5


def test_frames_for_interval_enumeration_oracle():
    config = SpectrogramConfig()
    interval = PhonemeInterval(label="AH", start=0.0, end=1.0)
    got = frames_for_interval(interval, config, n_frames=200)
    # oracle: enumerate centers i*128/16000 and test membership directly
    expected = [i for i in range(200) if interval.start <= i * 128 / 16000 < interval.end]
    assert list(got) == expected
    assert list(got) == list(range(0, 125))


def test_frames_for_interval_degenerate_empty():
    config = SpectrogramConfig()
    tiny = PhonemeInterval(label="AH", start=0.0081, end=0.0159)  # between centers
    assert len(frames_for_interval(tiny, config, n_frames=100)) == 0


def test_frame_partition_no_overlap():
    config = SpectrogramConfig()
    transcript = AlignedTranscript(
        intervals=(PhonemeInterval("AH", 0.0, 0.37), PhonemeInterval("IY", 0.37, 1.0)),
        audio_duration=1.0)
    n_frames = 126
    a = frames_for_interval(transcript.intervals[0], config, n_frames)
    b = frames_for_interval(transcript.intervals[1], config, n_frames)
    assert set(a) & set(b) == set()
    # frame 125's center sits exactly at the 1.0 s boundary, outside the
    # half-open intervals, so it falls back to SIL
    assert set(a) | set(b) == set(range(n_frames - 1))
    labels = frame_labels(transcript, config, n_frames)
    assert all(lab in ("AH", "IY") for lab in labels[:-1])
    assert labels[-1] == SIL


def _mono_corpus(rng, n_utts=1, label="AH", n_samples=8000):
    corpus = []
    for _ in range(n_utts):
        wave = Waveform(rng.standard_normal(n_samples) * 0.2)
        transcript = AlignedTranscript(
            intervals=(PhonemeInterval(label, 0.0, n_samples / 16000),),
            audio_duration=n_samples / 16000)
        corpus.append((wave, transcript))
    return corpus


def test_dictionary_single_phoneme_brute_force():
    rng = np.random.default_rng(0)
    corpus = _mono_corpus(rng)
    dico = build_dictionary(corpus)
    # independent loop-based average over all frames
    mag = np.abs(stft(corpus[0][0]).data)
    expected = np.zeros(256)
    for i in range(mag.shape[1]):
        expected += mag[:, i]
    expected /= mag.shape[1]
    np.testing.assert_allclose(dico.entries["AH"], expected, atol=1e-6)
    np.testing.assert_allclose(dico.global_average, expected, atol=1e-6)


def test_dictionary_duplicate_utterance_idempotent():
    rng = np.random.default_rng(1)
    corpus = _mono_corpus(rng)
    double = corpus + corpus
    one = build_dictionary(corpus)
    two = build_dictionary(double)
    np.testing.assert_allclose(one.entries["AH"], two.entries["AH"], atol=1e-12)


def test_dictionary_order_invariance():
    rng = np.random.default_rng(2)
    corpus = _mono_corpus(rng, n_utts=3, label="AH") + _mono_corpus(rng, n_utts=2, label="IY")
    fwd = build_dictionary(corpus)
    rev = build_dictionary(list(reversed(corpus)))
    for label in fwd.entries:
        np.testing.assert_allclose(fwd.entries[label], rev.entries[label], atol=1e-12)


def test_dictionary_two_point_mean():
    # two constant-magnitude inputs -> entry is their midpoint column
    config = SpectrogramConfig()
    ones = Waveform(np.ones(8000) * 0.1)
    threes = Waveform(np.ones(8000) * 0.3)
    transcript = AlignedTranscript(
        intervals=(PhonemeInterval("AH", 0.0, 0.5),), audio_duration=0.5)
    dico = build_dictionary([(ones, transcript), (threes, transcript)], config)
    m1 = np.abs(stft(ones, config).data)
    m3 = np.abs(stft(threes, config).data)
    expected = (m1.mean(axis=1) + m3.mean(axis=1)) / 2
    np.testing.assert_allclose(dico.entries["AH"], expected, atol=1e-9)


def test_dictionary_empty_and_mismatched_errors():
    with pytest.raises(InvalidInputError):
        build_dictionary([])
    rng = np.random.default_rng(3)
    wave = Waveform(rng.standard_normal(8000) * 0.1)
    bad = AlignedTranscript(intervals=(PhonemeInterval("AH", 0.0, 2.0),),
                            audio_duration=2.0)
    with pytest.raises(InvalidInputError):
        build_dictionary([(wave, bad)])


def test_assemble_matches_magnitude_shape_and_blocks():
    rng = np.random.default_rng(4)
    wave = Waveform(rng.standard_normal(16000) * 0.2)
    transcript = AlignedTranscript(
        intervals=(PhonemeInterval("AH", 0.0, 0.4), PhonemeInterval("IY", 0.4, 1.0)),
        audio_duration=1.0)
    dico = build_dictionary([(wave, transcript)])
    spec = stft(wave)
    lam = representation_for_spectrogram(spec, transcript, dico)
    assert lam.data.shape == spec.data.shape
    for i, label in enumerate(frame_labels(transcript, spec.config, spec.n_frames)):
        np.testing.assert_allclose(lam.data[:, i], dico.lookup(label), atol=1e-12)
    boundary = frames_for_interval(transcript.intervals[1], spec.config,
                                   spec.n_frames)[0]
    np.testing.assert_allclose(lam.data[:, boundary - 1], dico.entries["AH"])
    np.testing.assert_allclose(lam.data[:, boundary], dico.entries["IY"])


def test_assemble_single_phoneme_constant_columns():
    rng = np.random.default_rng(5)
    corpus = _mono_corpus(rng)
    dico = build_dictionary(corpus)
    lam = assemble_representation(corpus[0][1], 30, dico)
    for i in range(30):
        np.testing.assert_allclose(lam.data[:, i], dico.entries["AH"], atol=1e-12)


def test_assemble_unknown_label_fallback():
    rng = np.random.default_rng(6)
    corpus = _mono_corpus(rng)
    dico = build_dictionary(corpus)
    other = AlignedTranscript(intervals=(PhonemeInterval("ZH", 0.0, 0.5),),
                              audio_duration=0.5)
    lam = assemble_representation(other, 10, dico)
    np.testing.assert_allclose(lam.data[:, 0], dico.global_average, atol=1e-12)
    with pytest.raises(KeyError):
        assemble_representation(other, 10, dico, fallback=False)
    assert UNK in dico.entries
    avg_rep = global_average_representation(dico, 4)
    assert avg_rep.data.shape == (256, 4)


def test_dictionary_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    corpus = _mono_corpus(rng, n_utts=2, label="AH") + _mono_corpus(rng, label="IY")
    dico = build_dictionary(corpus)
    path = tmp_path / "dict.npz"
    save_dictionary(path, dico)
    back = load_dictionary(path)
    assert back.inventory == dico.inventory
    assert back.config == dico.config
    assert back.fingerprint() == dico.fingerprint()
    for label in dico.entries:
        np.testing.assert_allclose(back.entries[label], dico.entries[label])
        assert back.frame_counts[label] == dico.frame_counts[label]
