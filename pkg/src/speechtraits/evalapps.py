"""Evaluation metrics and the two analysis applications built on them.

Metrics: accuracy, macro F1 (single-label and per-label binary at 0.5),
concordance (shared with the training loss), and word error rate.  The
applications are trait-stratified ASR error analysis (per-group WER with
pairwise Mann-Whitney significance) and generation trait-transfer scoring
(cosine similarity between trait prediction vectors, reported mean ± std per
source->reference condition).
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import taxonomy
from .errors import DomainError, SpeechTraitsError
from .heads.losses import ccc as ccc_metric  # shared implementation  # noqa: F401
from .profiler import CONFIDENCE_ORDER, Clip, TraitPrediction, predict_trait


@dataclass
class EvalRecord:
    """One clip's ground truth and prediction, with optional ASR transcripts."""

    clip_id: str
    prediction: TraitPrediction
    true_labels: list[str] | None = None
    true_scalar: float | None = None
    ref_transcript: str | None = None
    hyp_transcript: str | None = None


def _record_kind(records: list[EvalRecord]) -> str:
    if not records:
        raise DomainError("no records")
    trait = records[0].prediction.trait
    for r in records:
        if r.prediction.trait != trait:
            raise DomainError("records mix traits")
    return taxonomy.default_taxonomy().category(trait).kind


def accuracy(records: list[EvalRecord]) -> float:
    """Fraction correct: argmax match (single-label) or exact set match at 0.5."""
    kind = _record_kind(records)
    hits = 0
    for r in records:
        if r.true_labels is None:
            raise DomainError(f"record {r.clip_id!r} lacks true labels")
        if kind == taxonomy.SINGLE_LABEL:
            hits += r.prediction.top_label == r.true_labels[0]
        else:
            predicted = {
                lbl for lbl, p in zip(r.prediction.labels, r.prediction.probs) if p > 0.5
            }
            hits += predicted == set(r.true_labels)
    return hits / len(records)


def macro_f1_arrays(true_idx: np.ndarray, pred_idx: np.ndarray, n_classes: int) -> float:
    """Unweighted mean per-class F1; classes absent from both sides are excluded."""
    f1s = []
    for c in range(n_classes):
        tp = int(np.sum((true_idx == c) & (pred_idx == c)))
        fp = int(np.sum((true_idx != c) & (pred_idx == c)))
        fn = int(np.sum((true_idx == c) & (pred_idx != c)))
        if tp + fp + fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    if not f1s:
        raise DomainError("no class present in truth or predictions")
    return float(np.mean(f1s))


def macro_f1_binary(true_bin: np.ndarray, pred_bin: np.ndarray) -> float:
    """Macro F1 over per-label binary decisions (rows = records, cols = labels)."""
    true_bin = np.asarray(true_bin, dtype=bool)
    pred_bin = np.asarray(pred_bin, dtype=bool)
    f1s = []
    for k in range(true_bin.shape[1]):
        t, p = true_bin[:, k], pred_bin[:, k]
        tp = int(np.sum(t & p))
        fp = int(np.sum(~t & p))
        fn = int(np.sum(t & ~p))
        if tp + fp + fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    if not f1s:
        raise DomainError("no label present in truth or predictions")
    return float(np.mean(f1s))


def macro_f1(records: list[EvalRecord]) -> float:
    kind = _record_kind(records)
    labels = records[0].prediction.labels
    if kind == taxonomy.SINGLE_LABEL:
        true_idx = np.array([labels.index(r.true_labels[0]) for r in records])
        pred_idx = np.array([int(np.argmax(r.prediction.probs)) for r in records])
        return macro_f1_arrays(true_idx, pred_idx, len(labels))
    true_bin = np.array([[lbl in r.true_labels for lbl in labels] for r in records])
    pred_bin = np.array([np.asarray(r.prediction.probs) > 0.5 for r in records])
    return macro_f1_binary(true_bin, pred_bin)


# --- word error rate ---

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_tokens(text_or_tokens) -> list[str]:
    """Lowercase, strip punctuation, whitespace-tokenize; drops emptied tokens."""
    if isinstance(text_or_tokens, str):
        tokens = text_or_tokens.split()
    else:
        tokens = list(text_or_tokens)
    out = []
    for tok in tokens:
        tok = tok.lower().translate(_PUNCT_TABLE).strip()
        if tok:
            out.append(tok)
    return out


def _edit_distance(ref: list[str], hyp: list[str]) -> int:
    """Levenshtein distance over tokens, single-row DP."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,  # deletion
                cur[j - 1] + 1,  # insertion
                prev[j - 1] + (r != h),  # substitution / match
            )
        prev = cur
    return prev[-1]


def wer(ref_tokens, hyp_tokens) -> float:
    """(substitutions + insertions + deletions) / |ref| via minimal edit distance."""
    ref = normalize_tokens(ref_tokens)
    hyp = normalize_tokens(hyp_tokens)
    if not ref:
        raise DomainError("reference is empty after normalization")
    return _edit_distance(ref, hyp) / len(ref)


# --- trait-stratified ASR error analysis ---


@dataclass
class GroupStats:
    count: int
    mean_wer: float
    wers: list[float] = field(repr=False, default_factory=list)


@dataclass
class StratifyResult:
    trait: str
    by: str
    min_confidence: str
    groups: dict[str, GroupStats]
    pairwise_p: dict[tuple[str, str], float]
    small_groups: list[str]
    n_input: int
    n_used: int


def stratify(
    records: list[EvalRecord],
    min_confidence: str = "high",
    by: str = "predicted",
) -> StratifyResult:
    """Group WER by trait label, keeping only confident-enough predictions.

    Groups with fewer than 2 records are flagged and excluded from the
    pairwise two-sided Mann-Whitney tests (but still reported).
    """
    if by not in ("predicted", "truth"):
        raise DomainError(f"by must be 'predicted' or 'truth', got {by!r}")
    if min_confidence not in CONFIDENCE_ORDER:
        raise DomainError(f"unknown confidence tier {min_confidence!r}")
    trait = records[0].prediction.trait if records else ""
    threshold = CONFIDENCE_ORDER[min_confidence]
    grouped: dict[str, list[float]] = {}
    n_used = 0
    for r in records:
        if CONFIDENCE_ORDER[r.prediction.confidence] < threshold:
            continue
        if r.ref_transcript is None or r.hyp_transcript is None:
            raise DomainError(f"record {r.clip_id!r} lacks transcripts")
        if by == "predicted":
            label = r.prediction.top_label
        else:
            if not r.true_labels:
                raise DomainError(f"record {r.clip_id!r} lacks true labels")
            label = r.true_labels[0]
        grouped.setdefault(label, []).append(wer(r.ref_transcript, r.hyp_transcript))
        n_used += 1
    groups = {
        label: GroupStats(count=len(ws), mean_wer=float(np.mean(ws)), wers=ws)
        for label, ws in sorted(grouped.items())
    }
    small = [label for label, g in groups.items() if g.count < 2]
    testable = [label for label in groups if label not in small]
    pairwise: dict[tuple[str, str], float] = {}
    for i, a in enumerate(testable):
        for b in testable[i + 1 :]:
            stat = scipy.stats.mannwhitneyu(
                groups[a].wers, groups[b].wers, alternative="two-sided"
            )
            pairwise[(a, b)] = float(stat.pvalue)
    return StratifyResult(
        trait=trait,
        by=by,
        min_confidence=min_confidence,
        groups=groups,
        pairwise_p=pairwise,
        small_groups=small,
        n_input=len(records),
        n_used=n_used,
    )


# --- generation trait-transfer scoring ---


def trait_similarity(p, q) -> float:
    """Cosine similarity between two prediction vectors over the same label set."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise DomainError(f"vector length mismatch: {p.shape} vs {q.shape}")
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    if np_ == 0.0 or nq == 0.0:
        raise DomainError("zero vector has no direction")
    return float(p @ q / (np_ * nq))


@dataclass
class GenEvalTriplet:
    """Source clip, reference (target) clip, and the generated output clip."""

    source: Clip
    reference: Clip
    output: Clip
    trait: str = "accent_broad"


@dataclass
class ConditionStats:
    n: int
    source_output_mean: float
    source_output_std: float
    reference_output_mean: float
    reference_output_std: float

    def row(self) -> dict:
        return {
            "n": self.n,
            "(Source, Output)": f"{self.source_output_mean:.3f} ± {self.source_output_std:.3f}",
            "(Reference, Output)": f"{self.reference_output_mean:.3f} ± {self.reference_output_std:.3f}",
        }


@dataclass
class GenEvalReport:
    trait: str
    conditions: dict[str, ConditionStats]
    skipped: list[tuple[str, str]]

    def to_table(self) -> list[dict]:
        return [
            {"condition": cond, **stats.row()}
            for cond, stats in sorted(self.conditions.items())
        ]


def gen_eval(
    triplets: list[GenEvalTriplet],
    weights,
    backend,
    trait: str = "accent_broad",
    prediction_fn=None,
) -> GenEvalReport:
    """Score whether generated clips resemble the reference or the source.

    For every triplet the trait head predicts all three clips; cosine
    similarities (source, output) and (reference, output) are aggregated per
    source->reference condition as mean ± std.  ``prediction_fn`` may replace
    the default probability-vector representation (e.g. with embeddings).
    """
    if not triplets:
        raise DomainError("no triplets")
    if prediction_fn is None:
        def prediction_fn(clip):
            return predict_trait(clip, weights, backend, trait)

    sims: dict[str, list[tuple[float, float]]] = {}
    skipped: list[tuple[str, str]] = []
    for trip in triplets:
        if trip.trait != trait:
            raise DomainError(f"triplet trait {trip.trait!r} does not match report trait {trait!r}")
        try:
            pred_s = prediction_fn(trip.source)
            pred_r = prediction_fn(trip.reference)
            pred_o = prediction_fn(trip.output)
        except SpeechTraitsError as exc:
            skipped.append((trip.output.id, str(exc)))
            continue
        condition = f"{pred_s.top_label}->{pred_r.top_label}"
        sims.setdefault(condition, []).append(
            (
                trait_similarity(pred_s.probs, pred_o.probs),
                trait_similarity(pred_r.probs, pred_o.probs),
            )
        )
    conditions = {}
    for cond, pairs in sims.items():
        arr = np.asarray(pairs)
        conditions[cond] = ConditionStats(
            n=len(pairs),
            source_output_mean=float(arr[:, 0].mean()),
            source_output_std=float(arr[:, 0].std()),
            reference_output_mean=float(arr[:, 1].mean()),
            reference_output_std=float(arr[:, 1].std()),
        )
    return GenEvalReport(trait=trait, conditions=conditions, skipped=skipped)
