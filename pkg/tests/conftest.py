"""Shared synthetic fixtures.

The joint corpus plants one label vector per clip that concatenates blocks for
every trait under test (sex, narrow accent, age, arousal, speech flow,
disfluency types), so one backend serves every head and multi-trait profiles
can be checked against the planted truth.
"""

from __future__ import annotations

import numpy as np
import pytest

from speechtraits import taxonomy
from speechtraits.embed import BackendDescriptor, SyntheticBackend
from speechtraits.heads import Hyper, age_sex_spec, single_task_spec, speech_flow_spec, train_head
from speechtraits.ingest import ClipRecord, assign_speaker_split

DESCRIPTOR = BackendDescriptor(name="synthetic", layers=4, dims=32, frame_rate_hz=50.0)

NARROW = taxonomy.default_taxonomy().labels("accent_narrow")
FLOW = taxonomy.default_taxonomy().labels("speech_flow")
DTYPES = taxonomy.default_taxonomy().labels("disfluency_type")

# planted vector blocks: sex(2) narrow(16) age(1) arousal(1) flow(2) dtypes(5)
_BLOCKS = {"sex": (0, 2), "narrow": (2, 18), "age": (18, 19), "arousal": (19, 20), "flow": (20, 22), "dtypes": (22, 27)}
PLANT_DIM = 27


def plant_vector(sex_i, narrow_i, age_norm, arousal, flow_i, dtype_idx) -> np.ndarray:
    v = np.zeros(PLANT_DIM)
    v[_BLOCKS["sex"][0] + sex_i] = 1.0
    v[_BLOCKS["narrow"][0] + narrow_i] = 1.0
    v[_BLOCKS["age"][0]] = age_norm
    v[_BLOCKS["arousal"][0]] = arousal
    v[_BLOCKS["flow"][0] + flow_i] = 1.0
    for k in dtype_idx:
        v[_BLOCKS["dtypes"][0] + k] = 1.0
    return v


def build_joint_corpus(n=120, seed=7):
    speakers = [f"spk{i:03d}" for i in range(n)]
    split = assign_speaker_split(speakers, seed=seed)
    records, planted = [], {}
    for i, spk in enumerate(speakers):
        sex_i = i % 2
        narrow_i = i % len(NARROW)
        age_years = 20.0 + (i * 7) % 55  # spans young/adult/senior bins
        arousal = ((i * 13) % 100) / 99.0
        flow_i = i % 2
        dtype_idx = [i % 5, (i + 2) % 5] if flow_i == 1 else []
        clip_id = f"clip{i:03d}"
        planted[clip_id] = plant_vector(sex_i, narrow_i, age_years / 100.0, arousal, flow_i, dtype_idx)
        narrow_label = NARROW[narrow_i]
        labels = {
            "sex": [("male", "female")[sex_i]],
            "accent_narrow": [narrow_label],
            "accent_broad": [taxonomy.narrow_to_broad(narrow_label)],
            "arousal": arousal,
            "speech_flow": [FLOW[flow_i]],
        }
        if dtype_idx:
            labels["disfluency_type"] = sorted({DTYPES[k] for k in dtype_idx}, key=DTYPES.index)
        records.append(
            ClipRecord(
                id=clip_id,
                audio_path="",
                dataset="synthetic",
                speaker_id=spk,
                split=split[spk],
                duration_s=3.0,
                sample_rate=16000,
                labels=labels,
                age_years=age_years,
            )
        )
    return records, planted


@pytest.fixture(scope="session")
def corpus():
    records, planted = build_joint_corpus()
    return {"records": records, "planted": planted}


@pytest.fixture(scope="session")
def backend(corpus):
    return SyntheticBackend(
        DESCRIPTOR, planted=corpus["planted"], noise_sigma=0.05, signal_scale=1.0
    )


@pytest.fixture(scope="session")
def heads_bundle(corpus, backend):
    """Heads trained on the joint corpus, keyed by trait id."""
    records = corpus["records"]
    L, D = DESCRIPTOR.layers, DESCRIPTOR.dims
    hyper = Hyper(lr=5e-4, epochs=6, batch_size=32)
    out = {}
    for trait in ("sex", "accent_broad", "accent_narrow", "arousal"):
        res = train_head(records, backend, single_task_spec(trait, L, D, seed=11), hyper)
        out[trait] = res.weights
    flow = train_head(records, backend, speech_flow_spec(L, D, seed=11), hyper)
    out["speech_flow"] = flow.weights
    out["disfluency_type"] = flow.weights
    age_sex = train_head(records, backend, age_sex_spec(L, D, seed=11), hyper)
    out["age"] = age_sex.weights
    return out
