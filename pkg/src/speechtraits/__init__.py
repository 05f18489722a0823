"""Multi-trait speech profiling toolkit.

A library for training lightweight trait-prediction heads on top of pluggable
speech-encoder features, assembling confidence-worded speaker profiles, and
running the downstream analyses they enable (trait-stratified ASR error
analysis, generation trait-transfer scoring, speaking-style prompts).
"""

TOOL_VERSION = "0.1.0"
WEIGHTS_FORMAT_VERSION = 1
PROFILE_SCHEMA_VERSION = 1

from . import errors, taxonomy  # noqa: E402,F401
