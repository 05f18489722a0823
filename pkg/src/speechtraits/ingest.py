"""Manifest handling, audio preprocessing, speaker splits, and augmentation.

Manifests are JSON Lines, one clip per line (see docs/formats.md for the full
field list).  Preprocessing standardizes audio to mono float32 at 16 kHz,
rejecting clips shorter than 3 seconds and undecodable files.  Training-time
augmentation applies, in order: additive Gaussian noise at a random SNR, a
contiguous time mask, resampling-style time stretch, and polarity inversion;
all randomness is keyed by (policy seed, clip id) so clips can be processed
in any order, on any worker, with identical results.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from . import taxonomy
from .errors import ClipRejected, DomainError, ParseError, UnmappableLabel
from .rng import keyed_rng

TARGET_RATE = 16000
MIN_DURATION_S = 3.0

SPLITS = ("train", "dev", "test")

_REQUIRED_FIELDS = ("id", "audio_path", "dataset", "speaker_id", "split", "duration_s", "sample_rate", "labels")
_OPTIONAL_FIELDS = ("age_years", "emotion_distribution", "ref_transcript", "hyp_transcript")


@dataclass
class ClipRecord:
    """One audio utterance with provenance, split, and validated labels."""

    id: str
    audio_path: str
    dataset: str
    speaker_id: str
    split: str
    duration_s: float
    sample_rate: int
    labels: dict = field(default_factory=dict)
    age_years: float | None = None
    emotion_distribution: dict[str, float] | None = None
    ref_transcript: str | None = None
    hyp_transcript: str | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "id": self.id,
            "audio_path": self.audio_path,
            "dataset": self.dataset,
            "speaker_id": self.speaker_id,
            "split": self.split,
            "duration_s": self.duration_s,
            "sample_rate": self.sample_rate,
            "labels": self.labels,
        }
        for name in _OPTIONAL_FIELDS:
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc


@dataclass(frozen=True)
class RejectionEntry:
    clip_id: str
    reason: str
    detail: str = ""
    line: int | None = None


def _validate_record(doc: dict, line: int) -> ClipRecord:
    unknown = set(doc) - set(_REQUIRED_FIELDS) - set(_OPTIONAL_FIELDS)
    if unknown:
        raise DomainError(f"unknown manifest fields {sorted(unknown)}")
    missing = [f for f in _REQUIRED_FIELDS if f not in doc]
    if missing:
        raise DomainError(f"missing manifest fields {missing}")
    if doc["split"] not in SPLITS:
        raise DomainError(f"split must be one of {SPLITS}, got {doc['split']!r}")
    tax = taxonomy.default_taxonomy()
    labels: dict = {}
    raw_labels = doc["labels"]
    if not isinstance(raw_labels, dict):
        raise DomainError("labels must be an object keyed by trait category")
    for category, value in raw_labels.items():
        kind = tax.category(category).kind
        if kind == taxonomy.SCALAR_REGRESSION:
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{category} value {value} outside [0, 1]")
            labels[category] = value
            continue
        if isinstance(value, str):
            value = [value]
        if category == "accent_narrow":
            value = [_resolve_accent(doc["dataset"], v) for v in value]
        labels[category] = tax.validate_labels(category, value)
    age_years = doc.get("age_years")
    if age_years is not None:
        age_years = float(age_years)
        labels.setdefault("age", [taxonomy.bin_age(age_years)])
    if "accent_narrow" in labels and "accent_broad" not in labels:
        labels["accent_broad"] = [taxonomy.narrow_to_broad(labels["accent_narrow"][0])]
    dist = doc.get("emotion_distribution")
    if dist is not None:
        emo_labels = tax.labels("emotion_categorical")
        clean = {}
        for k, v in dist.items():
            k = taxonomy.normalize_label(k)
            if k not in emo_labels:
                raise DomainError(f"unknown emotion {k!r} in distribution")
            if v < 0:
                raise DomainError("emotion distribution has negative mass")
            clean[k] = float(v)
        if abs(sum(clean.values()) - 1.0) > 1e-6:
            raise DomainError("emotion distribution does not sum to 1")
        dist = clean
        labels.setdefault(
            "emotion_categorical", [max(clean, key=lambda k: (clean[k], k))]
        )
    return ClipRecord(
        id=str(doc["id"]),
        audio_path=str(doc["audio_path"]),
        dataset=str(doc["dataset"]),
        speaker_id=str(doc["speaker_id"]),
        split=doc["split"],
        duration_s=float(doc["duration_s"]),
        sample_rate=int(doc["sample_rate"]),
        labels=labels,
        age_years=age_years,
        emotion_distribution=dist,
        ref_transcript=doc.get("ref_transcript"),
        hyp_transcript=doc.get("hyp_transcript"),
    )


def _resolve_accent(dataset: str, value: str) -> str:
    """Accept canonical narrow labels directly, else map the raw dataset label."""
    normalized = taxonomy.normalize_label(value)
    if normalized in taxonomy.default_taxonomy().labels("accent_narrow"):
        return normalized
    return taxonomy.map_dataset_accent(dataset, value)


def load_manifest(path, strict_audio: bool = True) -> tuple[list[ClipRecord], list[RejectionEntry]]:
    """Parse a JSON Lines manifest into validated records plus a rejection list.

    Malformed JSON raises ParseError with the line number.  Semantically
    invalid records (unknown labels, discarded accents, too-short clips) are
    collected as rejection entries rather than silently dropped.  With
    ``strict_audio`` the post-preprocessing invariants (>= 3 s, 16 kHz) are
    enforced; pass False when loading raw manifests destined for ingestion.
    """
    records: list[ClipRecord] = []
    rejections: list[RejectionEntry] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed manifest line: {exc.msg}", line=lineno) from exc
        if not isinstance(doc, dict):
            raise ParseError("manifest line is not a JSON object", line=lineno)
        clip_id = str(doc.get("id", f"<line {lineno}>"))
        try:
            record = _validate_record(doc, lineno)
        except UnmappableLabel as exc:
            rejections.append(RejectionEntry(clip_id, "unmappable_accent", str(exc), lineno))
            continue
        except DomainError as exc:
            rejections.append(RejectionEntry(clip_id, "invalid_record", str(exc), lineno))
            continue
        if strict_audio and record.duration_s < MIN_DURATION_S:
            rejections.append(
                RejectionEntry(clip_id, ClipRejected.SHORT_CLIP, f"{record.duration_s} s", lineno)
            )
            continue
        if strict_audio and record.sample_rate != TARGET_RATE:
            rejections.append(
                RejectionEntry(clip_id, "bad_sample_rate", f"{record.sample_rate} Hz", lineno)
            )
            continue
        records.append(record)
    return records, rejections


def write_manifest(records: list[ClipRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def write_rejection_report(rejections: list[RejectionEntry], path) -> None:
    """CSV with one (clip_id, reason) row per rejected record."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "reason"])
        for entry in rejections:
            writer.writerow([entry.clip_id, entry.reason])


# --- audio ---


def read_audio(path) -> tuple[np.ndarray, int]:
    """Read a WAV container; raises ClipRejected on missing or undecodable files."""
    p = Path(path)
    if not p.exists():
        raise ClipRejected(ClipRejected.MISSING_AUDIO, str(path))
    try:
        rate, data = scipy.io.wavfile.read(p)
    except Exception as exc:
        raise ClipRejected(ClipRejected.DECODE_ERROR, f"{path}: {exc}") from exc
    return data, int(rate)


def _to_float_mono(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        data = data.mean(axis=1)  # stereo downmix by channel averaging
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    return data.astype(np.float64)


def preprocess_clip(waveform: np.ndarray, sample_rate: int) -> np.ndarray:
    """Standardize one clip to mono float32 at 16 kHz.

    Duration is preserved to within one sample period; clips under 3 s raise
    ClipRejected(short_clip).
    """
    data = np.asarray(waveform)
    if data.size == 0 or sample_rate <= 0:
        raise ClipRejected(ClipRejected.DECODE_ERROR, "empty or invalid audio")
    mono = _to_float_mono(data)
    if mono.size / sample_rate < MIN_DURATION_S:
        raise ClipRejected(ClipRejected.SHORT_CLIP, f"{mono.size / sample_rate:.3f} s")
    if sample_rate != TARGET_RATE:
        g = math.gcd(TARGET_RATE, sample_rate)
        mono = scipy.signal.resample_poly(mono, TARGET_RATE // g, sample_rate // g)
    return mono.astype(np.float32)


def preprocess_file(path) -> np.ndarray:
    data, rate = read_audio(path)
    return preprocess_clip(data, rate)


def write_wav(path, waveform: np.ndarray, sample_rate: int = TARGET_RATE) -> None:
    scipy.io.wavfile.write(path, sample_rate, np.asarray(waveform, dtype=np.float32))


# --- speaker splits ---


def assign_speaker_split(speaker_ids: list[str], seed: int) -> dict[str, str]:
    """Deterministic 60/20/20 speaker partition: seeded shuffle, contiguous slices.

    dev and test each get floor(0.2 n) speakers; remainders go to train.  The
    input is sorted before shuffling, so the result depends only on the set of
    ids and the seed, not on input order.
    """
    if len(speaker_ids) != len(set(speaker_ids)):
        raise DomainError("speaker ids must be unique")
    if len(speaker_ids) < 3:
        raise DomainError(f"need at least 3 speakers, got {len(speaker_ids)}")
    ordered = sorted(speaker_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(ordered)
    n = len(ordered)
    n_dev = n_test = int(0.2 * n)
    n_train = n - n_dev - n_test
    assignment = {}
    for i, speaker in enumerate(ordered):
        if i < n_train:
            assignment[speaker] = "train"
        elif i < n_train + n_dev:
            assignment[speaker] = "dev"
        else:
            assignment[speaker] = "test"
    return assignment


# --- augmentation ---


@dataclass(frozen=True)
class AugmentationPolicy:
    noise_prob: float = 1.0
    snr_db_range: tuple[float, float] = (3.0, 30.0)
    time_mask_prob: float = 1.0
    mask_ratio_range: tuple[float, float] = (0.10, 0.15)
    stretch_prob: float = 1.0
    stretch_rate_range: tuple[float, float] = (0.9, 1.1)
    polarity_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_prob", "time_mask_prob", "stretch_prob", "polarity_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"{name} must be in [0, 1], got {p}")
        for name in ("snr_db_range", "mask_ratio_range", "stretch_rate_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(f"{name} must be ordered, got ({lo}, {hi})")


def add_noise_snr(waveform: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise scaled so the signal-to-noise ratio is ``snr_db``."""
    x = np.asarray(waveform, dtype=np.float64)
    power = float(np.mean(x**2))
    if power == 0.0:
        return x
    sigma = math.sqrt(power / 10 ** (snr_db / 10.0))
    return x + sigma * rng.standard_normal(x.size)


def mask_time(waveform: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Zero one contiguous span covering ``ratio`` of the samples."""
    x = np.asarray(waveform, dtype=np.float64).copy()
    n = x.size
    span = int(round(ratio * n))
    span = min(max(span, 1), n)
    start = int(rng.integers(0, n - span + 1))
    x[start : start + span] = 0.0
    return x


def time_stretch(waveform: np.ndarray, rate: float) -> np.ndarray:
    """Resampling-style stretch: output duration = input duration / rate.

    Pitch is not preserved; the stretch is a plain FFT resample.
    """
    if rate <= 0:
        raise DomainError("stretch rate must be positive")
    x = np.asarray(waveform, dtype=np.float64)
    n_out = max(1, round(x.size / rate))
    return scipy.signal.resample(x, n_out)


def invert_polarity(waveform: np.ndarray) -> np.ndarray:
    return -np.asarray(waveform)


def _mask_span_bounds(n: int, lo: float, hi: float) -> tuple[int, int]:
    low = math.ceil(lo * n)
    high = math.floor(hi * n)
    if high < low:  # degenerate for tiny n; fall back to plain rounding
        low = high = int(round((lo + hi) / 2 * n))
    return max(low, 1), max(high, 1)


def augment(waveform: np.ndarray, policy: AugmentationPolicy, clip_id: str) -> np.ndarray:
    """Apply noise -> time mask -> time stretch -> polarity, keyed by (seed, clip_id).

    The draw sequence is fixed regardless of which stages fire, so a given
    (policy, clip) pair is bit-reproducible.
    """
    rng = keyed_rng("augment", policy.seed, clip_id)
    x = np.asarray(waveform, dtype=np.float64)

    if rng.uniform() < policy.noise_prob:
        snr = rng.uniform(*policy.snr_db_range)
        x = add_noise_snr(x, snr, rng)

    if rng.uniform() < policy.time_mask_prob:
        n = x.size
        lo_span, hi_span = _mask_span_bounds(n, *policy.mask_ratio_range)
        ratio = rng.uniform(*policy.mask_ratio_range)
        span = int(np.clip(round(ratio * n), lo_span, hi_span))
        start = int(rng.integers(0, n - span + 1))
        x = x.copy()
        x[start : start + span] = 0.0

    if rng.uniform() < policy.stretch_prob:
        rate = rng.uniform(*policy.stretch_rate_range)
        x = time_stretch(x, rate)

    if rng.uniform() < policy.polarity_prob:
        x = -x

    return x.astype(np.float32)
