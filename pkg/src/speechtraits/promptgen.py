"""Speaking-style prompts from speaker profiles.

Profiles become ordered style tags (only traits at moderate-or-better
confidence qualify; low-confidence predictions never produce a tag), and the
tags render deterministically through a template.  An optional external
text-generation service can rewrite the tags instead; on failure it falls
back to the deterministic rendering and says so.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DomainError
from .profiler import SpeakerProfile, TraitPrediction

_ACCENT_DISPLAY = {
    "north_america": "North American",
    "british_isles": "British Isles",
    "english": "English (England)",
    "welsh": "Welsh",
    "scottish": "Scottish",
    "northern_irish": "Northern Irish",
    "irish": "Irish",
    "germanic": "Germanic-influenced",
    "romance": "Romance-influenced",
    "slavic": "Slavic-influenced",
    "semitic": "Semitic-influenced",
    "oceania": "Oceanian",
    "south_africa": "South African",
    "east_asia": "East Asian",
    "southeast_asia": "Southeast Asian",
    "south_asia": "South Asian",
}

_AGE_DISPLAY = {
    "young_adult": "a young adult voice",
    "adult": "an adult voice",
    "senior_adult": "a senior adult voice",
}

_EMOTION_DISPLAY = {
    "neutral": "neutral",
    "happy": "happy",
    "sad": "sad",
    "angry": "angry",
    "contempt": "contemptuous",
    "fear": "fearful",
    "disgust": "disgusted",
    "surprise": "surprised",
    "other": "hard-to-name",
}

_VOICE_QUALITY_DISPLAY = {"vocal_fry": "vocal-fry", "lisp": "lisping"}

_FLOW_DISPLAY = {
    "fluent": "overall fluent speech",
    "disfluent": "noticeably disfluent speech",
}

_DISFLUENCY_DISPLAY = {
    "prolongation": "sound prolongations",
    "word_repetition": "word repetitions",
    "sound_repetition": "sound repetitions",
    "block": "speech blocks",
    "interjection": "frequent interjections",
}

_EXPRESSIVENESS_DISPLAY = {
    "animated": "an animated delivery",
    "laughing": "laughter in the speech",
    "passive": "a passive delivery",
    "whispered": "a whispered delivery",
    "enunciated": "a precisely articulated delivery",
}

_SCALAR_DISPLAY = {
    ("arousal", "calm"): "an overall calm delivery",
    ("arousal", "active"): "a highly active delivery",
    ("valence", "negative"): "a negative emotional tone",
    ("valence", "positive"): "a positive emotional tone",
}

MULTI_LABEL_TAG_THRESHOLD = 0.8


@dataclass(frozen=True)
class StyleTag:
    trait: str
    label: str
    descriptor: str | None
    text: str


@dataclass
class PromptRequest:
    tags: list[StyleTag]
    template_id: str = "default"
    auxiliary: dict[str, str] = field(default_factory=dict)


def _qualifies(pred: TraitPrediction) -> bool:
    return not pred.excluded_from_prompt


def _accent_tag(pred: TraitPrediction) -> StyleTag | None:
    if not _qualifies(pred) or pred.descriptor not in ("distinct", "likely"):
        return None
    label = pred.top_label
    if label == "other":
        text = f"a {pred.descriptor} accent from outside North America and the British Isles"
    else:
        text = f"a {pred.descriptor} {_ACCENT_DISPLAY[label]} accent"
    return StyleTag(pred.trait, label, pred.descriptor, text)


def tags_from_profile(profile: SpeakerProfile) -> list[StyleTag]:
    """Ordered, confidence-filtered tags: sex, age, accent, voice quality,
    emotion, arousal/valence, flow, expressiveness."""
    tags: list[StyleTag] = []
    traits = profile.traits

    pred = traits.get("sex")
    if pred and _qualifies(pred):
        tags.append(StyleTag("sex", pred.top_label, None, f"a {pred.top_label} speaker"))

    pred = traits.get("age")
    if pred and _qualifies(pred):
        tags.append(StyleTag("age", pred.top_label, None, _AGE_DISPLAY[pred.top_label]))

    narrow = traits.get("accent_narrow")
    broad = traits.get("accent_broad")
    accent = None
    if narrow is not None:
        accent = _accent_tag(narrow)
    if accent is None and broad is not None:
        accent = _accent_tag(broad)
    if accent is not None:
        tags.append(accent)

    pred = traits.get("voice_quality")
    if pred and _qualifies(pred):
        for label, p in zip(pred.labels, pred.probs):
            if p > MULTI_LABEL_TAG_THRESHOLD:
                display = _VOICE_QUALITY_DISPLAY.get(label, label)
                tags.append(StyleTag("voice_quality", label, None, display))

    pred = traits.get("emotion_categorical")
    if pred and _qualifies(pred) and pred.descriptor in ("very", "likely"):
        label = pred.top_label
        tags.append(
            StyleTag(
                "emotion_categorical",
                label,
                pred.descriptor,
                f"{pred.descriptor} {_EMOTION_DISPLAY[label]}",
            )
        )

    for trait in ("arousal", "valence"):
        pred = traits.get(trait)
        if pred and _qualifies(pred) and pred.descriptor:
            tags.append(
                StyleTag(trait, pred.descriptor, pred.descriptor, _SCALAR_DISPLAY[(trait, pred.descriptor)])
            )

    pred = traits.get("speech_flow")
    if pred and _qualifies(pred):
        tags.append(StyleTag("speech_flow", pred.top_label, None, _FLOW_DISPLAY[pred.top_label]))

    pred = traits.get("disfluency_type")
    if pred and _qualifies(pred):
        for label, p in zip(pred.labels, pred.probs):
            if p > MULTI_LABEL_TAG_THRESHOLD:
                tags.append(StyleTag("disfluency_type", label, None, _DISFLUENCY_DISPLAY[label]))

    pred = traits.get("expressiveness")
    if pred and _qualifies(pred):
        for label, p in zip(pred.labels, pred.probs):
            if p > MULTI_LABEL_TAG_THRESHOLD:
                tags.append(StyleTag("expressiveness", label, None, _EXPRESSIVENESS_DISPLAY[label]))

    return tags


_TEMPLATES = ("default",)

_FALLBACK_SENTENCE = "A speaker with no strongly marked vocal characteristics."


def render_prompt(req: PromptRequest) -> str:
    """Deterministic template rendering; every tag's text appears exactly once."""
    if req.template_id not in _TEMPLATES:
        raise ConfigError(f"unknown prompt template {req.template_id!r}")
    by_trait: dict[str, list[StyleTag]] = {}
    for tag in req.tags:
        by_trait.setdefault(tag.trait, []).append(tag)

    sentences: list[str] = []
    identity = [t.text for t in by_trait.get("sex", [])] + [t.text for t in by_trait.get("age", [])]
    if identity:
        sentences.append("The recording features " + " with ".join(identity) + ".")
    for trait in ("accent_broad", "accent_narrow"):
        for tag in by_trait.get(trait, []):
            sentences.append("The speaker has " + tag.text + ".")
    qualities = [t.text for t in by_trait.get("voice_quality", [])]
    if qualities:
        sentences.append("The voice sounds " + ", ".join(qualities) + ".")
    for tag in by_trait.get("emotion_categorical", []):
        sentences.append("Emotionally, the speech comes across as " + tag.text + ".")
    tone = [t.text for t in by_trait.get("arousal", [])] + [t.text for t in by_trait.get("valence", [])]
    if tone:
        sentences.append("It carries " + " and ".join(tone) + ".")
    flow = [t.text for t in by_trait.get("speech_flow", [])] + [
        t.text for t in by_trait.get("disfluency_type", [])
    ]
    if flow:
        sentences.append("Speech flow shows " + ", ".join(flow) + ".")
    style = [t.text for t in by_trait.get("expressiveness", [])]
    if style:
        sentences.append("The delivery style includes " + ", ".join(style) + ".")

    if not sentences:
        sentences.append(_FALLBACK_SENTENCE)

    aux = req.auxiliary
    notes = []
    if aux.get("pitch_band"):
        notes.append(f"{aux['pitch_band']} pitch")
    if aux.get("rate_band"):
        notes.append(f"{aux['rate_band']} speaking rate")
    if aux.get("noise_band"):
        notes.append(f"{aux['noise_band']} background")
    if notes:
        sentences.append("Recording notes: " + ", ".join(notes) + ".")
    return " ".join(sentences)


SERVICE_INSTRUCTION = (
    "Write one fluent paragraph describing this speaker's voice and speaking "
    "style for a speech-generation system. Use every provided tag, keep the "
    "stated confidence wording (distinct, likely, very), and do not invent "
    "traits that are not in the tags."
)


@dataclass
class ServiceConfig:
    url: str
    timeout_s: float = 10.0
    retries: int = 2
    api_key: str | None = None

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(doc) - {"url", "timeout_s", "retries", "api_key_env"}
        if unknown:
            raise ConfigError(f"unknown service config keys {sorted(unknown)}")
        url = os.environ.get("SPEECHTRAITS_PROMPT_URL", doc.get("url"))
        if not url:
            raise ConfigError("prompt service config needs a url")
        key_env = doc.get("api_key_env", "SPEECHTRAITS_PROMPT_API_KEY")
        return cls(
            url=url,
            timeout_s=float(doc.get("timeout_s", 10.0)),
            retries=int(doc.get("retries", 2)),
            api_key=os.environ.get(key_env),
        )


@dataclass
class PromptResult:
    text: str
    source: str  # "service" or "fallback"
    retries_used: int = 0

    @property
    def fallback(self) -> bool:
        return self.source == "fallback"


def llm_render(req: PromptRequest, service: ServiceConfig) -> PromptResult:
    """Ask the external service to word the prompt; fall back deterministically.

    Transport failures are retried up to ``service.retries`` times; a
    malformed response falls back immediately.  Total blocking time never
    exceeds (retries + 1) * timeout.
    """
    payload = json.dumps(
        {
            "instruction": SERVICE_INSTRUCTION,
            "tags": [t.text for t in req.tags],
            "auxiliary": req.auxiliary,
        },
        sort_keys=True,
    ).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if service.api_key:
        headers["Authorization"] = f"Bearer {service.api_key}"
    attempts = service.retries + 1
    used = attempts - 1
    for attempt in range(attempts):
        request = urllib.request.Request(service.url, data=payload, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=service.timeout_s) as resp:
                body = resp.read()
        except (urllib.error.URLError, TimeoutError, OSError):
            continue  # transport problem: retry until the budget runs out
        try:
            doc = json.loads(body.decode("utf-8"))
            text = doc["text"]
            if not isinstance(text, str):
                raise DomainError("service 'text' is not a string")
        except (DomainError, KeyError, ValueError, UnicodeDecodeError):
            used = attempt  # malformed response: no point retrying
            break
        return PromptResult(text=text, source="service", retries_used=attempt)
    return PromptResult(text=render_prompt(req), source="fallback", retries_used=used)
