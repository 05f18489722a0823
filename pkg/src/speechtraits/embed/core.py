"""Layer stacks and the backend protocol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import BackendError, ShapeError


@dataclass(frozen=True)
class LayerStack:
    """Encoder output: layers x frames x dims of float32 features.

    Values must be finite; a backend that produces NaN/Inf is broken and the
    constructor surfaces that as BackendError instead of letting it propagate
    silently into downstream math.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"layer stack must be (L, T, D) with all dims >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise BackendError("layer stack contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def layers(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def dims(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class BackendDescriptor:
    """Static shape contract a backend promises for every stack it emits."""

    name: str
    layers: int
    dims: int
    frame_rate_hz: float

    def __post_init__(self):
        if self.layers < 1 or self.dims < 1 or self.frame_rate_hz <= 0:
            raise ShapeError("backend descriptor dims and frame rate must be positive")

    def frames_for(self, duration_s: float) -> int:
        return max(1, round(duration_s * self.frame_rate_hz))


@runtime_checkable
class Backend(Protocol):
    """A feature extractor mapping one clip to a LayerStack."""

    descriptor: BackendDescriptor
    requires_audio: bool

    def encode(
        self,
        clip_id: str,
        waveform: np.ndarray | None,
        sample_rate: int = 16000,
        duration_s: float | None = None,
    ) -> LayerStack: ...
