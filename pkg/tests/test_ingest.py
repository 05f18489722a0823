import json
import math

import numpy as np
import pytest
import scipy.io.wavfile

from speechtraits.errors import ClipRejected, DomainError, ParseError
from speechtraits.ingest import (
    AugmentationPolicy,
    ClipRecord,
    add_noise_snr,
    assign_speaker_split,
    augment,
    invert_polarity,
    load_manifest,
    mask_time,
    preprocess_clip,
    preprocess_file,
    time_stretch,
    write_manifest,
    write_rejection_report,
)
from speechtraits.rng import keyed_rng


def _record_doc(i, **overrides):
    doc = {
        "id": f"clip{i}",
        "audio_path": f"/audio/clip{i}.wav",
        "dataset": "commonvoice",
        "speaker_id": f"spk{i}",
        "split": "train",
        "duration_s": 4.0,
        "sample_rate": 16000,
        "labels": {"sex": ["male"]},
    }
    doc.update(overrides)
    return doc


def _write_manifest(path, docs):
    path.write_text("\n".join(json.dumps(d) for d in docs) + "\n", encoding="utf-8")


# --- manifest loading ---


def test_load_manifest_round_trip(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_record_doc(i) for i in range(3)])
    records, rejections = load_manifest(path)
    assert len(records) == 3 and not rejections
    assert records[0].labels["sex"] == ["male"]

    out = tmp_path / "copy.jsonl"
    write_manifest(records, out)
    records2, _ = load_manifest(out)
    assert [r.to_json_dict() for r in records2] == [r.to_json_dict() for r in records]


def test_load_manifest_rejects_discarded_accent(tmp_path):
    path = tmp_path / "m.jsonl"
    docs = [
        _record_doc(0, labels={"accent_narrow": ["Spanish"]}, dataset="l2arctic"),
        _record_doc(1, labels={"accent_narrow": ["British"]}),
        _record_doc(2),
    ]
    _write_manifest(path, docs)
    records, rejections = load_manifest(path)
    assert [r.id for r in records] == ["clip0", "clip2"]
    assert records[0].labels["accent_narrow"] == ["romance"]
    assert records[0].labels["accent_broad"] == ["other"]  # derived from narrow
    assert len(rejections) == 1
    assert rejections[0].clip_id == "clip1"
    assert rejections[0].reason == "unmappable_accent"


def test_load_manifest_truncated_line_parse_error(tmp_path):
    path = tmp_path / "m.jsonl"
    lines = [json.dumps(_record_doc(0)), '{"id": "clip1", "audio_path']
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_manifest(path)
    assert err.value.line == 2


def test_load_manifest_collects_semantic_rejections(tmp_path):
    path = tmp_path / "m.jsonl"
    docs = [
        _record_doc(0, labels={"sex": ["robot"]}),
        _record_doc(1, split="holdout"),
        _record_doc(2, labels={"arousal": 1.7}),
        _record_doc(3, duration_s=2.0),
        _record_doc(4, sample_rate=44100),
        _record_doc(5, surprise_field=1),
        _record_doc(6),
    ]
    _write_manifest(path, docs)
    records, rejections = load_manifest(path)
    assert [r.id for r in records] == ["clip6"]
    reasons = {e.clip_id: e.reason for e in rejections}
    assert reasons["clip3"] == "short_clip"
    assert reasons["clip4"] == "bad_sample_rate"
    assert reasons["clip0"] == reasons["clip1"] == reasons["clip2"] == reasons["clip5"] == "invalid_record"


def test_load_manifest_lenient_mode_for_raw_audio(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_record_doc(0, duration_s=2.0, sample_rate=44100)])
    records, rejections = load_manifest(path, strict_audio=False)
    assert len(records) == 1 and not rejections


def test_load_manifest_age_and_emotion_extensions(tmp_path):
    path = tmp_path / "m.jsonl"
    docs = [
        _record_doc(0, age_years=25, labels={}),
        _record_doc(1, emotion_distribution={"Happy": 0.6, "sad": 0.4}, labels={}),
        _record_doc(2, emotion_distribution={"happy": 0.6, "sad": 0.2}, labels={}),
    ]
    _write_manifest(path, docs)
    records, rejections = load_manifest(path)
    by_id = {r.id: r for r in records}
    assert by_id["clip0"].labels["age"] == ["young_adult"]
    assert by_id["clip1"].labels["emotion_categorical"] == ["happy"]
    assert by_id["clip1"].emotion_distribution == {"happy": 0.6, "sad": 0.4}
    assert rejections[0].clip_id == "clip2"  # distribution mass != 1


def test_rejection_report_format(tmp_path):
    path = tmp_path / "m.jsonl"
    _write_manifest(path, [_record_doc(0, labels={"sex": ["robot"]})])
    _, rejections = load_manifest(path)
    report = tmp_path / "rejections.csv"
    write_rejection_report(rejections, report)
    lines = report.read_text().strip().splitlines()
    assert lines[0] == "clip_id,reason"
    assert lines[1] == "clip0,invalid_record"


# --- preprocessing ---


def test_preprocess_stereo_441k(tmp_path):
    sr = 44100
    t = np.arange(int(5.0 * sr)) / sr
    left = 0.5 * np.sin(2 * np.pi * 220 * t)
    right = 0.5 * np.sin(2 * np.pi * 330 * t)
    stereo = np.stack([left, right], axis=1).astype(np.float32)
    out = preprocess_clip(stereo, sr)
    assert out.dtype == np.float32
    assert out.ndim == 1
    assert out.size == 5 * 16000  # exact for 44100 -> 16000 on a 5 s clip
    assert np.abs(out).max() <= 1.0 + 1e-6


def test_preprocess_duration_preserved_within_one_sample():
    sr = 22050
    n = int(3.17 * sr)
    wf = np.random.default_rng(0).standard_normal(n).astype(np.float32) * 0.1
    out = preprocess_clip(wf, sr)
    assert abs(out.size / 16000 - n / sr) <= 1.0 / 16000


def test_preprocess_rejects_short_clip():
    with pytest.raises(ClipRejected) as err:
        preprocess_clip(np.zeros(int(2.5 * 16000), dtype=np.float32), 16000)
    assert err.value.reason == ClipRejected.SHORT_CLIP


def test_preprocess_int16_normalized():
    wf = (np.random.default_rng(1).integers(-32768, 32767, 4 * 16000)).astype(np.int16)
    out = preprocess_clip(wf, 16000)
    assert np.abs(out).max() <= 1.0


def test_preprocess_file_missing_and_corrupted(tmp_path):
    with pytest.raises(ClipRejected) as err:
        preprocess_file(tmp_path / "nope.wav")
    assert err.value.reason == ClipRejected.MISSING_AUDIO
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"this is not audio at all")
    with pytest.raises(ClipRejected) as err:
        preprocess_file(bad)
    assert err.value.reason == ClipRejected.DECODE_ERROR


def test_preprocess_file_round_trip(tmp_path):
    sr = 16000
    wf = (0.25 * np.sin(2 * np.pi * 440 * np.arange(4 * sr) / sr)).astype(np.float32)
    path = tmp_path / "tone.wav"
    scipy.io.wavfile.write(path, sr, wf)
    out = preprocess_file(path)
    assert np.allclose(out, wf, atol=1e-7)


# --- speaker splits ---


def test_split_counts_10_speakers():
    speakers = [f"s{i}" for i in range(10)]
    assignment = assign_speaker_split(speakers, seed=42)
    counts = {split: sum(1 for v in assignment.values() if v == split) for split in ("train", "dev", "test")}
    assert counts == {"train": 6, "dev": 2, "test": 2}


def test_split_deterministic_and_order_independent():
    speakers = [f"s{i}" for i in range(17)]
    a = assign_speaker_split(speakers, seed=3)
    b = assign_speaker_split(list(reversed(speakers)), seed=3)
    assert a == b
    assert assign_speaker_split(speakers, seed=4) != a


def test_split_each_speaker_exactly_once():
    speakers = [f"s{i}" for i in range(23)]
    assignment = assign_speaker_split(speakers, seed=0)
    assert sorted(assignment) == sorted(speakers)
    n_dev = sum(1 for v in assignment.values() if v == "dev")
    n_test = sum(1 for v in assignment.values() if v == "test")
    assert n_dev == n_test == int(0.2 * 23)  # remainders go to train


def test_split_degenerate_inputs():
    with pytest.raises(DomainError):
        assign_speaker_split(["a", "b"], seed=0)
    with pytest.raises(DomainError):
        assign_speaker_split(["a", "a", "b"], seed=0)


# --- augmentation ---


def _speech_like(n=4 * 16000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000
    wf = 0.3 * np.sin(2 * np.pi * 180 * t) + 0.05 * rng.standard_normal(n)
    return wf.astype(np.float64)


def test_augment_keyed_determinism():
    wf = _speech_like()
    policy = AugmentationPolicy(seed=5)
    a = augment(wf, policy, "clipX")
    b = augment(wf, policy, "clipX")
    c = augment(wf, policy, "clipY")
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_polarity_stage():
    wf = _speech_like()
    assert np.array_equal(invert_polarity(wf), -wf)
    policy = AugmentationPolicy(noise_prob=0.0, time_mask_prob=0.0, stretch_prob=0.0, polarity_prob=1.0, seed=1)
    out = augment(wf, policy, "p")
    assert np.allclose(out, -wf.astype(np.float32), atol=1e-7)


def test_noise_snr_within_half_db_of_target():
    wf = _speech_like()
    for snr in (3.0, 12.0, 30.0):
        noisy = add_noise_snr(wf, snr, keyed_rng("snr-test", snr))
        noise = noisy - wf
        measured = 10 * math.log10(np.mean(wf**2) / np.mean(noise**2))
        assert abs(measured - snr) < 0.5


def test_augment_noise_stage_snr_oracle():
    wf = _speech_like()
    policy = AugmentationPolicy(
        snr_db_range=(10.0, 10.0), time_mask_prob=0.0, stretch_prob=0.0, polarity_prob=0.0, seed=2
    )
    out = augment(wf, policy, "clipN").astype(np.float64)
    noise = out - wf
    measured = 10 * math.log10(np.mean(wf**2) / np.mean(noise**2))
    assert abs(measured - 10.0) < 0.5


def test_mask_zeroes_10_to_15_percent():
    wf = np.abs(_speech_like()) + 0.01  # strictly nonzero everywhere
    policy = AugmentationPolicy(noise_prob=0.0, stretch_prob=0.0, polarity_prob=0.0, seed=3)
    for clip_id in ("a", "b", "c", "d", "e"):
        out = augment(wf, policy, clip_id)
        zeros = int(np.sum(out == 0.0))
        assert 0.10 * wf.size <= zeros <= 0.15 * wf.size
        # single contiguous span
        idx = np.flatnonzero(out == 0.0)
        assert idx[-1] - idx[0] + 1 == zeros


def test_mask_time_direct():
    wf = np.ones(1000)
    out = mask_time(wf, 0.12, keyed_rng("mask"))
    assert int(np.sum(out == 0.0)) == 120


def test_time_stretch_length_oracle():
    wf = _speech_like(4 * 16000)
    out = time_stretch(wf, 1.1)
    assert out.size == round(4 * 16000 / 1.1)
    assert abs(out.size / 16000 - 4.0 / 1.1) <= 1.0 / 16000
    policy = AugmentationPolicy(
        noise_prob=0.0, time_mask_prob=0.0, stretch_rate_range=(1.1, 1.1), polarity_prob=0.0, seed=4
    )
    via_policy = augment(wf, policy, "s")
    assert via_policy.size == round(4 * 16000 / 1.1)


def test_stretch_slower_rate_lengthens():
    wf = _speech_like()
    assert time_stretch(wf, 0.9).size == round(wf.size / 0.9)


def test_policy_validation():
    with pytest.raises(DomainError):
        AugmentationPolicy(noise_prob=1.5)
    with pytest.raises(DomainError):
        AugmentationPolicy(snr_db_range=(30.0, 3.0))


def test_augment_parallel_order_irrelevant():
    wf = _speech_like()
    policy = AugmentationPolicy(seed=9)
    first = [augment(wf, policy, f"c{i}") for i in range(4)]
    second = [augment(wf, policy, f"c{i}") for i in reversed(range(4))][::-1]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
