"""Deterministic synthetic backend.

Emits pseudo-random stacks keyed by clip id through a counter-based PRNG, so
the same id always yields the same stack no matter the processing order.  A
fixed random projection of a planted one-hot label can be added to every
frame, which makes classes exactly linearly separable at zero noise; this is
the oracle backend the training and profiling tests are built on.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import DomainError
from ..rng import keyed_rng
from .core import BackendDescriptor, LayerStack

DEFAULT_DESCRIPTOR = BackendDescriptor(name="synthetic", layers=4, dims=32, frame_rate_hz=50.0)


@lru_cache(maxsize=16)
def _label_projection(num_classes: int, dims: int, seed: int) -> np.ndarray:
    """Fixed unit-norm row per class; rows are the planted class directions."""
    rng = keyed_rng("synthetic-projection", seed, num_classes, dims)
    proj = rng.standard_normal((num_classes, dims))
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)
    return proj.astype(np.float32)


def synth_encode(
    clip_id: str,
    planted_label: np.ndarray | None = None,
    noise_sigma: float = 0.0,
    *,
    duration_s: float = 3.0,
    descriptor: BackendDescriptor = DEFAULT_DESCRIPTOR,
    signal_scale: float = 1.0,
    projection_seed: int = 0,
) -> LayerStack:
    """Build the pseudo-random stack for ``clip_id``.

    When ``planted_label`` (a one-hot or mixing vector over classes) is given,
    ``signal_scale * planted_label @ projection`` is added to every frame of
    every layer, on top of noise with per-dim standard deviation
    ``noise_sigma``.
    """
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be >= 0")
    shape = (descriptor.layers, descriptor.frames_for(duration_s), descriptor.dims)
    rng = keyed_rng("synthetic-stack", clip_id)
    values = noise_sigma * rng.standard_normal(shape)
    if planted_label is not None:
        label = np.asarray(planted_label, dtype=np.float64).ravel()
        proj = _label_projection(label.size, descriptor.dims, projection_seed)
        values = values + signal_scale * (label @ proj)
    return LayerStack(values=values.astype(np.float32))


class SyntheticBackend:
    """Backend wrapper around :func:`synth_encode`.

    ``planted`` maps clip ids to label vectors; unknown ids get pure noise.
    Window-sliced ids ("clip@1.000") fall back to their base clip's planted
    label unless the full windowed id is planted explicitly.  Stacks depend
    only on (clip id, duration), never on waveform content, so manifests
    without audio files work.
    """

    requires_audio = False

    def __init__(
        self,
        descriptor: BackendDescriptor = DEFAULT_DESCRIPTOR,
        *,
        planted: dict[str, np.ndarray] | None = None,
        noise_sigma: float = 0.0,
        signal_scale: float = 1.0,
        projection_seed: int = 0,
        default_duration_s: float = 3.0,
    ):
        self.descriptor = descriptor
        self.planted = dict(planted or {})
        self.noise_sigma = noise_sigma
        self.signal_scale = signal_scale
        self.projection_seed = projection_seed
        self.default_duration_s = default_duration_s

    def encode(
        self,
        clip_id: str,
        waveform: np.ndarray | None,
        sample_rate: int = 16000,
        duration_s: float | None = None,
    ) -> LayerStack:
        if waveform is not None:
            duration = len(waveform) / sample_rate
        else:
            duration = duration_s if duration_s is not None else self.default_duration_s
        base_id = clip_id.split("@", 1)[0]
        return synth_encode(
            clip_id,
            planted_label=self.planted.get(clip_id, self.planted.get(base_id)),
            noise_sigma=self.noise_sigma,
            duration_s=duration,
            descriptor=self.descriptor,
            signal_scale=self.signal_scale,
            projection_seed=self.projection_seed,
        )
