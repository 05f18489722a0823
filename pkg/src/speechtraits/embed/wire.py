"""Bit-exact wire protocol for the external extractor process.

Request:  one JSON header line ``{"id", "sample_rate", "num_samples"}`` +
newline + ``num_samples`` float32 little-endian PCM samples.
Response: one JSON header line ``{"id", "L", "T", "D"}`` + newline +
``L*T*D`` float32 little-endian values in (layer, frame, dim) row-major order.
"""

from __future__ import annotations

import json
from typing import BinaryIO

import numpy as np

from ..errors import ProtocolError
from .core import LayerStack

_MAX_HEADER_BYTES = 1 << 16


def encode_request(clip_id: str, waveform: np.ndarray, sample_rate: int) -> bytes:
    pcm = np.ascontiguousarray(np.asarray(waveform, dtype="<f4").ravel())
    header = json.dumps(
        {"id": clip_id, "sample_rate": int(sample_rate), "num_samples": int(pcm.size)},
        separators=(",", ":"),
        sort_keys=True,
    )
    return header.encode("utf-8") + b"\n" + pcm.tobytes()


def encode_response(clip_id: str, stack: LayerStack) -> bytes:
    header = json.dumps(
        {"id": clip_id, "L": stack.layers, "T": stack.frames, "D": stack.dims},
        separators=(",", ":"),
        sort_keys=True,
    )
    payload = np.ascontiguousarray(stack.values, dtype="<f4").tobytes()
    return header.encode("utf-8") + b"\n" + payload


def _read_header_line(stream: BinaryIO) -> dict:
    buf = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            if not buf:
                raise ProtocolError("connection closed before header")
            raise ProtocolError("connection closed mid-header")
        if ch == b"\n":
            break
        buf += ch
        if len(buf) > _MAX_HEADER_BYTES:
            raise ProtocolError("header line too long")
    try:
        header = json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("header is not a JSON object")
    return header


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolError(f"payload truncated: expected {n} bytes, missing {remaining}")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_request(stream: BinaryIO) -> tuple[str, int, np.ndarray]:
    """Read one request; returns (clip_id, sample_rate, waveform)."""
    header = _read_header_line(stream)
    try:
        clip_id = str(header["id"])
        sample_rate = int(header["sample_rate"])
        num_samples = int(header["num_samples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad request header fields: {exc}") from exc
    if num_samples < 0 or sample_rate <= 0:
        raise ProtocolError("request header fields out of range")
    raw = _read_exact(stream, num_samples * 4)
    waveform = np.frombuffer(raw, dtype="<f4").copy()
    return clip_id, sample_rate, waveform


def decode_response(stream: BinaryIO, expect_id: str | None = None) -> LayerStack:
    """Read one response; returns the LayerStack (values bit-identical to the sender's)."""
    header = _read_header_line(stream)
    try:
        clip_id = str(header["id"])
        L, T, D = int(header["L"]), int(header["T"]), int(header["D"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad response header fields: {exc}") from exc
    if expect_id is not None and clip_id != expect_id:
        raise ProtocolError(f"response id {clip_id!r} does not match request id {expect_id!r}")
    if min(L, T, D) < 1:
        raise ProtocolError(f"response dims out of range: L={L} T={T} D={D}")
    raw = _read_exact(stream, L * T * D * 4)
    values = np.frombuffer(raw, dtype="<f4").reshape(L, T, D).copy()
    return LayerStack(values=values)
