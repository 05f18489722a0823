"""Auxiliary signal descriptors for prompt enrichment: pitch, rate, noise bands.

These are simple waveform statistics, not model predictions, and the band
thresholds are implementation-chosen conventions (documented in
docs/formats.md), not published values.
"""

from __future__ import annotations

import numpy as np

FRAME_S = 0.040
HOP_S = 0.020
F0_MIN_HZ = 70.0
F0_MAX_HZ = 350.0
VOICING_THRESHOLD = 0.55


def _frames(waveform: np.ndarray, sr: int) -> np.ndarray:
    frame = int(FRAME_S * sr)
    hop = int(HOP_S * sr)
    x = np.asarray(waveform, dtype=np.float64)
    if x.size < frame:
        return np.empty((0, frame))
    n = 1 + (x.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def median_f0(waveform: np.ndarray, sr: int = 16000) -> float | None:
    """Median fundamental frequency over voiced frames via autocorrelation.

    Returns None when fewer than 5 frames look voiced.
    """
    frames = _frames(waveform, sr)
    if frames.shape[0] == 0:
        return None
    frames = frames - frames.mean(axis=1, keepdims=True)
    lag_min = int(sr / F0_MAX_HZ)
    lag_max = min(int(sr / F0_MIN_HZ), frames.shape[1] - 1)
    if lag_max <= lag_min:
        return None
    energies = (frames**2).sum(axis=1)
    floor = np.percentile(energies, 30)
    f0s = []
    for frame, energy in zip(frames, energies):
        if energy <= floor or energy == 0.0:
            continue
        spec = np.fft.rfft(frame, n=2 * frame.size)
        ac = np.fft.irfft(spec * np.conj(spec))[: frame.size]
        if ac[0] <= 0:
            continue
        window = ac[lag_min : lag_max + 1] / ac[0]
        best = int(np.argmax(window))
        if window[best] >= VOICING_THRESHOLD:
            f0s.append(sr / (lag_min + best))
    if len(f0s) < 5:
        return None
    return float(np.median(f0s))


def pitch_band(f0_hz: float) -> str:
    if f0_hz < 150.0:
        return "low"
    if f0_hz <= 250.0:
        return "medium"
    return "high"


def speaking_rate(waveform: np.ndarray, sr: int = 16000) -> float:
    """Syllable-rate proxy: energy-envelope peaks per second."""
    frames = _frames(waveform, sr)
    if frames.shape[0] < 3:
        return 0.0
    env = np.sqrt((frames**2).mean(axis=1))
    smooth = np.convolve(env, np.ones(3) / 3, mode="same")
    threshold = 1.2 * np.median(smooth)
    min_gap = max(1, int(0.1 / HOP_S))
    peaks = 0
    last = -min_gap
    for i in range(1, len(smooth) - 1):
        if (
            smooth[i] > threshold
            and smooth[i] >= smooth[i - 1]
            and smooth[i] >= smooth[i + 1]
            and i - last >= min_gap
        ):
            peaks += 1
            last = i
    duration = len(waveform) / sr
    return peaks / duration if duration > 0 else 0.0


def rate_band(rate_per_s: float) -> str:
    if rate_per_s < 3.0:
        return "slow"
    if rate_per_s <= 5.0:
        return "moderate"
    return "fast"


def noise_floor_db(waveform: np.ndarray, sr: int = 16000) -> float:
    """Rough SNR estimate: loud-frame RMS over quiet-frame RMS, in dB."""
    frames = _frames(waveform, sr)
    if frames.shape[0] < 5:
        return 0.0
    rms = np.sqrt((frames**2).mean(axis=1)) + 1e-12
    quiet = np.percentile(rms, 10)
    loud = np.percentile(rms, 90)
    return float(20.0 * np.log10(loud / quiet))


def noise_band(snr_db: float) -> str:
    if snr_db >= 25.0:
        return "clean"
    if snr_db >= 10.0:
        return "slightly noisy"
    return "noisy"


def describe_signal(waveform: np.ndarray, sr: int = 16000) -> dict[str, str]:
    """Pitch/rate/noise bands for one clip; pitch is omitted when unvoiced."""
    out = {}
    f0 = median_f0(waveform, sr)
    if f0 is not None:
        out["pitch_band"] = pitch_band(f0)
    out["rate_band"] = rate_band(speaking_rate(waveform, sr))
    out["noise_band"] = noise_band(noise_floor_db(waveform, sr))
    return out
