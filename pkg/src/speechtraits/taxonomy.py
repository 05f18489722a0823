"""Canonical trait label sets and mappings from heterogeneous dataset labels.

The taxonomy covers eleven trait categories: four static (sex, age, broad and
narrow accent, voice quality) and the dynamic ones (categorical emotion,
arousal, valence, speech flow, disfluency type, expressiveness).  Label sets
and the narrow->broad accent grouping are shipped as versioned JSON data files
so that new corpora can be added without code changes.

Everything here is immutable after load and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import ArityError, DomainError, UnmappableLabel

SINGLE_LABEL = "single_label"
MULTI_LABEL = "multi_label"
SCALAR_REGRESSION = "scalar_regression"

_KINDS = (SINGLE_LABEL, MULTI_LABEL, SCALAR_REGRESSION)

#: Narrow accent labels that roll up into the british_isles broad group.
_BRITISH_ISLES = frozenset({"english", "welsh", "scottish", "northern_irish", "irish"})

#: Age group boundaries in years: <30 young, 30-60 adult, >60 senior.
AGE_GROUPS = ("young_adult", "adult", "senior_adult")

_NORM_RE = re.compile(r"[\s\-]+")


def normalize_label(label: str) -> str:
    """Lowercase and collapse spaces/hyphens to underscores."""
    return _NORM_RE.sub("_", label.strip().lower())


@dataclass(frozen=True)
class TraitCategory:
    """One trait category: its id, task kind, and ordered canonical labels."""

    id: str
    kind: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown category kind {self.kind!r}")
        if len(set(self.labels)) != len(self.labels):
            raise DomainError(f"duplicate labels in category {self.id!r}")

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown label {label!r} for category {self.id!r}") from None


class Taxonomy:
    """Immutable collection of trait categories loaded from a JSON document."""

    def __init__(self, document: dict):
        if "categories" not in document:
            raise DomainError("taxonomy document missing 'categories'")
        self.schema_version = document.get("schema_version", 1)
        self.version = str(document.get("version", "1"))
        cats = [
            TraitCategory(id=c["id"], kind=c["kind"], labels=tuple(c["labels"]))
            for c in document["categories"]
        ]
        ids = [c.id for c in cats]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate category ids in taxonomy")
        self._categories = {c.id: c for c in cats}
        self._document = document

    @property
    def category_ids(self) -> tuple[str, ...]:
        return tuple(self._categories)

    def category(self, category_id: str) -> TraitCategory:
        try:
            return self._categories[category_id]
        except KeyError:
            raise DomainError(f"unknown trait category {category_id!r}") from None

    def labels(self, category_id: str) -> tuple[str, ...]:
        return self.category(category_id).labels

    def voice_quality_groups(self) -> dict[str, tuple[str, ...]]:
        """Perceptual groups (pitch/rhythm/clarity/texture/volume) of voice-quality labels."""
        for c in self._document["categories"]:
            if c["id"] == "voice_quality":
                return {k: tuple(v) for k, v in c.get("groups", {}).items()}
        return {}

    def content_hash(self) -> str:
        """Stable hash of the label content, used to guard trained-weights compatibility."""
        canon = json.dumps(
            [
                {"id": c.id, "kind": c.kind, "labels": list(c.labels)}
                for c in self._categories.values()
            ],
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def validate_labels(self, category_id: str, labels: list[str]) -> list[str]:
        """Normalize ``labels`` to canonical casing and check category arity.

        Raises DomainError for unknown labels (or labels passed to a scalar
        category) and ArityError when a single-label category receives a list
        whose length is not exactly one.
        """
        cat = self.category(category_id)
        if cat.kind == SCALAR_REGRESSION:
            raise DomainError(f"category {category_id!r} is scalar-valued and has no labels")
        normalized = [normalize_label(lbl) for lbl in labels]
        for lbl in normalized:
            if lbl not in cat.labels:
                raise DomainError(f"unknown label {lbl!r} for category {category_id!r}")
        if len(set(normalized)) != len(normalized):
            raise DomainError(f"duplicate labels {normalized!r} for category {category_id!r}")
        if cat.kind == SINGLE_LABEL and len(normalized) != 1:
            raise ArityError(
                f"category {category_id!r} is single-label, got {len(normalized)} labels"
            )
        return normalized


class AccentMappingTable:
    """(dataset_id, raw_label) -> canonical narrow accent, or an explicit discard.

    A ``null`` target in the JSON marks labels the pipeline deliberately
    discards (e.g. bare "British", which does not name a regional variety).
    A ``"*"`` key gives a dataset-wide default for corpora whose every clip
    belongs to one group.
    """

    def __init__(self, document: dict, taxonomy: Taxonomy):
        self.schema_version = document.get("schema_version", 1)
        self.version = str(document.get("version", "1"))
        self._datasets: dict[str, dict[str, str | None]] = {}
        narrow = set(taxonomy.labels("accent_narrow"))
        for dataset, table in document["datasets"].items():
            entries: dict[str, str | None] = {}
            for raw, target in table.items():
                if target is not None and target not in narrow:
                    raise DomainError(
                        f"mapping target {target!r} for ({dataset!r}, {raw!r}) "
                        "is not a narrow accent label"
                    )
                entries[normalize_label(raw) if raw != "*" else "*"] = target
            self._datasets[dataset] = entries

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return tuple(self._datasets)

    def entries(self):
        """Yield every declared (dataset_id, raw_label, target) triple."""
        for dataset, table in self._datasets.items():
            for raw, target in table.items():
                yield dataset, raw, target

    def lookup(self, dataset_id: str, raw_label: str) -> str:
        if dataset_id not in self._datasets:
            raise DomainError(f"dataset {dataset_id!r} is not registered in the accent table")
        table = self._datasets[dataset_id]
        key = normalize_label(raw_label)
        if key in table:
            target = table[key]
        elif "*" in table:
            target = table["*"]
        else:
            raise UnmappableLabel(
                f"label {raw_label!r} from dataset {dataset_id!r} has no declared mapping"
            )
        if target is None:
            raise UnmappableLabel(
                f"label {raw_label!r} from dataset {dataset_id!r} is too ambiguous to keep"
            )
        return target


def _load_json(name: str) -> dict:
    with resources.files("speechtraits.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    return Taxonomy(_load_json("taxonomy.json"))


@lru_cache(maxsize=1)
def default_accent_table() -> AccentMappingTable:
    return AccentMappingTable(_load_json("accent_mapping.json"), default_taxonomy())


def taxonomy_hash() -> str:
    return default_taxonomy().content_hash()


def bin_age(age_years: float) -> str:
    """Map a chronological age in years to its age-group label.

    Ages below 30 are young_adult, 30-60 inclusive adult, above 60
    senior_adult.  Ages outside [0, 120] raise DomainError.
    """
    if not 0 <= age_years <= 120:
        raise DomainError(f"age {age_years!r} outside [0, 120]")
    if age_years < 30:
        return "young_adult"
    if age_years <= 60:
        return "adult"
    return "senior_adult"


def narrow_to_broad(narrow: str) -> str:
    """Roll a narrow accent label up into its broad group."""
    labels = default_taxonomy().labels("accent_narrow")
    if narrow not in labels:
        raise DomainError(f"unknown narrow accent label {narrow!r}")
    if narrow == "north_america":
        return "north_america"
    if narrow in _BRITISH_ISLES:
        return "british_isles"
    return "other"


def map_dataset_accent(dataset_id: str, raw_label: str) -> str:
    """Map a raw dataset accent label to the canonical narrow accent label.

    Raises UnmappableLabel when the label is deliberately discarded or has no
    declared mapping; callers must drop the record rather than guess.
    """
    return default_accent_table().lookup(dataset_id, raw_label)


def validate_labels(category_id: str, labels: list[str]) -> list[str]:
    """Validate ``labels`` against the default taxonomy (see Taxonomy.validate_labels)."""
    return default_taxonomy().validate_labels(category_id, labels)
