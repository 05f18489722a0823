"""Inference: per-trait predictions, confidence tiers, and profile assembly.

Confidence tiers follow the production thresholds: sex 0.8; broad accent
0.8/0.5; narrow accent 0.5/0.3 (below 0.3 the accent is flagged hard to
tell); categorical emotion 0.4/0.3; arousal and valence are described only at
the extremes (< 0.2 / > 0.8); multilabel traits and disfluency types are
described only above 0.8.  Age groups come from deterministic binning of the
regression output, so their tier is fixed at high.  Low-confidence traits
stay in the profile JSON but are flagged as excluded from prompt generation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import PROFILE_SCHEMA_VERSION, taxonomy
from .errors import ConfigError, DomainError
from .heads.losses import sigmoid, softmax
from .heads.model import HeadWeights, forward, weighted_layer_average
from .heads.weights_io import weights_fingerprint
from .ingest import ClipRecord, read_audio

WINDOW_S = 3.0
STEP_S = 1.0
_EPS = 1e-9

CONFIDENCE_ORDER = {"low": 0, "moderate": 1, "high": 2}


@dataclass
class Clip:
    """A clip handed to inference: id plus waveform, or just a duration."""

    id: str
    waveform: np.ndarray | None = None
    sample_rate: int = 16000
    duration_s: float | None = None

    @property
    def duration(self) -> float:
        if self.waveform is not None:
            return len(self.waveform) / self.sample_rate
        if self.duration_s is None:
            raise DomainError(f"clip {self.id!r} has neither waveform nor duration")
        return self.duration_s

    def window(self, start_s: float, end_s: float) -> "Clip":
        """Sub-clip covering [start_s, end_s); id gains an @start suffix."""
        wid = f"{self.id}@{start_s:.3f}"
        if self.waveform is None:
            return Clip(id=wid, duration_s=end_s - start_s, sample_rate=self.sample_rate)
        a = int(round(start_s * self.sample_rate))
        b = int(round(end_s * self.sample_rate))
        return Clip(id=wid, waveform=self.waveform[a:b], sample_rate=self.sample_rate)

    @classmethod
    def from_record(cls, record: ClipRecord, load_audio: bool = True) -> "Clip":
        if load_audio and record.audio_path and Path(record.audio_path).exists():
            data, rate = read_audio(record.audio_path)
            from .ingest import preprocess_clip

            return cls(id=record.id, waveform=preprocess_clip(data, rate))
        return cls(id=record.id, duration_s=record.duration_s)


@dataclass
class TraitPrediction:
    """One trait's prediction with its confidence tier and wording token."""

    trait: str
    labels: tuple[str, ...] = ()
    probs: np.ndarray | None = None
    scalar: float | None = None
    confidence: str = "low"
    descriptor: str | None = None

    @property
    def top_label(self) -> str:
        # ties break toward the earlier label in the canonical order
        return self.labels[int(np.argmax(self.probs))]

    @property
    def excluded_from_prompt(self) -> bool:
        return self.confidence == "low"


def confidence_level(trait: str, value) -> tuple[str, str | None]:
    """Tier and wording token for a prediction (probability vector or scalar)."""
    cat = taxonomy.default_taxonomy().category(trait)
    if cat.kind == taxonomy.SCALAR_REGRESSION:
        v = float(value)
        if trait == "arousal":
            if v < 0.2:
                return "high", "calm"
            if v > 0.8:
                return "high", "active"
            return "low", None
        if trait == "valence":
            if v < 0.2:
                return "high", "negative"
            if v > 0.8:
                return "high", "positive"
            return "low", None
        raise DomainError(f"no confidence rule for scalar trait {trait!r}")
    probs = np.asarray(value, dtype=float).ravel()
    m = float(probs.max())
    if trait == "sex":
        return ("high", None) if m >= 0.8 else ("low", None)
    if trait == "accent_broad":
        if m >= 0.8:
            return "high", "distinct"
        if m >= 0.5:
            return "moderate", "likely"
        return "low", None
    if trait == "accent_narrow":
        if m >= 0.5:
            return "high", "distinct"
        if m >= 0.3:
            return "moderate", "likely"
        return "low", "hard_to_tell"
    if trait == "emotion_categorical":
        if m >= 0.4:
            return "high", "very"
        if m >= 0.3:
            return "moderate", "likely"
        return "low", "maybe"
    if trait in ("voice_quality", "expressiveness", "disfluency_type"):
        return ("high", None) if m > 0.8 else ("low", None)
    if trait == "speech_flow":
        return ("high", None) if m >= 0.8 else ("low", None)
    if trait == "age":
        # groups are deterministic bins of the regression output
        return "high", None
    raise DomainError(f"no confidence rule for trait {trait!r}")


def _encode_clip(clip: Clip, backend):
    return backend.encode(clip.id, clip.waveform, clip.sample_rate, duration_s=clip.duration_s)


def _scores_for(clip: Clip, weights: HeadWeights, backend, trait: str) -> np.ndarray:
    stack = _encode_clip(clip, backend)
    features = weighted_layer_average(stack, weights.layer_logits)
    return forward(features, weights, trait)


def predict_trait(clip: Clip, weights: HeadWeights, backend, trait: str | None = None) -> TraitPrediction:
    """Predict one trait for one clip: softmax / sigmoid / squashed scalar by kind."""
    trait = trait or weights.only_trait()
    scores = _scores_for(clip, weights, backend, trait)
    cat = taxonomy.default_taxonomy().category(trait)
    task = weights.spec.task(trait)

    if trait == "age":
        scalar = float(sigmoid(scores[0]))
        group = taxonomy.bin_age(100.0 * scalar)
        probs = np.zeros(cat.num_labels)
        probs[cat.label_index(group)] = 1.0
        conf, desc = confidence_level(trait, probs)
        return TraitPrediction(trait, cat.labels, probs, scalar, conf, desc)
    if task.loss == "ccc" or cat.kind == taxonomy.SCALAR_REGRESSION:
        scalar = float(sigmoid(scores[0]))
        conf, desc = confidence_level(trait, scalar)
        return TraitPrediction(trait, (), None, scalar, conf, desc)
    if cat.kind == taxonomy.SINGLE_LABEL:
        probs = softmax(scores)
    else:
        probs = sigmoid(scores)
    conf, desc = confidence_level(trait, probs)
    return TraitPrediction(trait, cat.labels, probs, None, conf, desc)


def sliding_windows(duration_s: float) -> list[tuple[float, float]]:
    """3-second windows at a 1-second step, plus a tail window when needed.

    Windows are [k, k+3] for k = 0, 1, 2, ... while they fit; if the last one
    ends short of the clip, a final [duration-3, duration] window is added.
    """
    if duration_s < WINDOW_S:
        raise DomainError(f"duration {duration_s} s is below the {WINDOW_S} s window")
    windows = []
    k = 0.0
    while k + WINDOW_S <= duration_s + _EPS:
        windows.append((k, k + WINDOW_S))
        k += STEP_S
    if windows[-1][1] < duration_s - _EPS:
        windows.append((duration_s - WINDOW_S, duration_s))
    return windows


def predict_disfluency(clip: Clip, flow_weights: HeadWeights, backend) -> tuple[TraitPrediction, TraitPrediction]:
    """Sliding-window inference with the two-head flow model.

    The utterance disfluent probability is the max window disfluent
    probability, and each disfluency type's score is its max over windows
    (breaks can co-occur, and any break anywhere makes the clip disfluent).
    """
    flow_cat = taxonomy.default_taxonomy().category("speech_flow")
    type_cat = taxonomy.default_taxonomy().category("disfluency_type")
    disfluent_idx = flow_cat.label_index("disfluent")
    max_disfluent = 0.0
    type_scores = np.zeros(type_cat.num_labels)
    for start, end in sliding_windows(clip.duration):
        wclip = clip.window(start, end)
        stack = _encode_clip(wclip, backend)
        features = weighted_layer_average(stack, flow_weights.layer_logits)
        flow_probs = softmax(forward(features, flow_weights, "speech_flow"))
        max_disfluent = max(max_disfluent, float(flow_probs[disfluent_idx]))
        type_scores = np.maximum(
            type_scores, sigmoid(forward(features, flow_weights, "disfluency_type"))
        )
    flow_probs = np.empty(2)
    flow_probs[disfluent_idx] = max_disfluent
    flow_probs[1 - disfluent_idx] = 1.0 - max_disfluent
    conf, desc = confidence_level("speech_flow", flow_probs)
    flow_pred = TraitPrediction("speech_flow", flow_cat.labels, flow_probs, None, conf, desc)
    conf, desc = confidence_level("disfluency_type", type_scores)
    type_pred = TraitPrediction("disfluency_type", type_cat.labels, type_scores, None, conf, desc)
    return flow_pred, type_pred


def ensemble(pred_a: TraitPrediction, pred_b: TraitPrediction) -> TraitPrediction:
    """Naive two-model ensemble: elementwise mean, confidence recomputed."""
    if pred_a.trait != pred_b.trait or pred_a.labels != pred_b.labels:
        raise DomainError(
            f"cannot ensemble {pred_a.trait!r}/{pred_a.labels} with {pred_b.trait!r}/{pred_b.labels}"
        )
    probs = None
    scalar = None
    if pred_a.probs is not None:
        if pred_b.probs is None:
            raise DomainError("one prediction has probs, the other does not")
        probs = (np.asarray(pred_a.probs, dtype=float) + np.asarray(pred_b.probs, dtype=float)) / 2.0
    if pred_a.scalar is not None and pred_b.scalar is not None:
        scalar = (pred_a.scalar + pred_b.scalar) / 2.0
    conf, desc = confidence_level(pred_a.trait, probs if probs is not None else scalar)
    return TraitPrediction(pred_a.trait, pred_a.labels, probs, scalar, conf, desc)


@dataclass
class SpeakerProfile:
    """All requested trait predictions for one clip, plus model provenance."""

    clip_id: str
    traits: dict[str, TraitPrediction] = field(default_factory=dict)
    weights_hashes: dict[str, str] = field(default_factory=dict)
    schema_version: int = PROFILE_SCHEMA_VERSION


#: Assembly (and prompt) order for traits in a profile.
TRAIT_ORDER = (
    "sex",
    "age",
    "accent_broad",
    "accent_narrow",
    "voice_quality",
    "emotion_categorical",
    "arousal",
    "valence",
    "speech_flow",
    "disfluency_type",
    "expressiveness",
)


def build_profile(
    clip: Clip,
    weight_set: dict[str, HeadWeights],
    backend,
    traits: list[str] | None = None,
) -> SpeakerProfile:
    """Assemble a profile for the requested traits.

    Accent routing runs the broad classifier first and invokes the narrow
    head only when the broad argmax is "other".  The speech-flow pair always
    comes from the sliding-window disfluency path.  Low-confidence traits are
    retained with confidence=low and flagged excluded-from-prompt.
    """
    requested = list(traits) if traits is not None else list(weight_set)
    for trait in requested:
        if trait not in weight_set:
            raise ConfigError(f"no weights provided for requested trait {trait!r}")
    if "accent_narrow" in requested and "accent_broad" not in requested:
        raise ConfigError("narrow accent requires the broad accent head for routing")
    requested = [t for t in TRAIT_ORDER if t in requested]

    profile = SpeakerProfile(clip_id=clip.id)
    flow_done = False
    for trait in requested:
        weights = weight_set[trait]
        if trait == "accent_narrow":
            broad = profile.traits["accent_broad"]
            if broad.top_label != "other":
                continue  # narrow head consulted only for non-NA, non-BI voices
            profile.traits[trait] = predict_trait(clip, weights, backend, trait)
        elif trait in ("speech_flow", "disfluency_type"):
            if flow_done:
                continue
            flow_pred, type_pred = predict_disfluency(clip, weight_set[trait], backend)
            if "speech_flow" in requested:
                profile.traits["speech_flow"] = flow_pred
            if "disfluency_type" in requested:
                profile.traits["disfluency_type"] = type_pred
            flow_done = True
            continue
        else:
            profile.traits[trait] = predict_trait(clip, weights, backend, trait)
        profile.weights_hashes.setdefault(trait, weights_fingerprint(weights))
    for trait in ("speech_flow", "disfluency_type"):
        if trait in profile.traits:
            profile.weights_hashes.setdefault(trait, weights_fingerprint(weight_set[trait]))
    return profile


# --- profile JSON ---


def prediction_to_json(pred: TraitPrediction) -> dict:
    doc: dict = {"confidence": pred.confidence, "descriptor": pred.descriptor}
    if pred.probs is not None:
        doc["labels"] = list(pred.labels)
        doc["probs"] = [float(p) for p in pred.probs]
    if pred.scalar is not None:
        doc["scalar"] = float(pred.scalar)
    doc["excluded_from_prompt"] = pred.excluded_from_prompt
    return doc


def prediction_from_json(trait: str, doc: dict) -> TraitPrediction:
    probs = np.array(doc["probs"], dtype=float) if "probs" in doc else None
    return TraitPrediction(
        trait=trait,
        labels=tuple(doc.get("labels", ())),
        probs=probs,
        scalar=doc.get("scalar"),
        confidence=doc["confidence"],
        descriptor=doc.get("descriptor"),
    )


def profile_to_json(profile: SpeakerProfile) -> dict:
    return {
        "clip_id": profile.clip_id,
        "schema_version": profile.schema_version,
        "traits": {t: prediction_to_json(p) for t, p in profile.traits.items()},
        "provenance": {"weights_hashes": dict(profile.weights_hashes)},
    }


def profile_from_json(doc: dict) -> SpeakerProfile:
    if doc.get("schema_version") != PROFILE_SCHEMA_VERSION:
        raise DomainError(
            f"profile schema version {doc.get('schema_version')} unsupported"
        )
    return SpeakerProfile(
        clip_id=doc["clip_id"],
        traits={t: prediction_from_json(t, p) for t, p in doc["traits"].items()},
        weights_hashes=dict(doc.get("provenance", {}).get("weights_hashes", {})),
        schema_version=doc["schema_version"],
    )


def dump_profile(profile: SpeakerProfile) -> str:
    return json.dumps(profile_to_json(profile), sort_keys=True, separators=(",", ":"))


def parse_profile(text: str) -> SpeakerProfile:
    return profile_from_json(json.loads(text))
