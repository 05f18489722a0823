"""Binary weights file.

Layout: magic ``VXPF``, u32 format version, u32 JSON-metadata length, the
metadata (head spec, taxonomy hash, tensor manifest), then every parameter
tensor as float32 little-endian in the declared order.  Serialization is
deterministic, so a file's SHA-256 doubles as the model fingerprint recorded
in profile provenance.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .. import TOOL_VERSION, WEIGHTS_FORMAT_VERSION, taxonomy
from ..errors import CompatibilityError, FormatError
from .model import HeadWeights, spec_from_dict, spec_to_dict

MAGIC = b"VXPF"


def _tensor_items(weights: HeadWeights):
    yield "layer_logits", weights.layer_logits
    for i, (w, b) in enumerate(weights.conv):
        yield f"conv.{i}.weight", w
        yield f"conv.{i}.bias", b
    for task in weights.spec.tasks:
        for j, (w, b) in enumerate(weights.heads[task.trait]):
            yield f"head.{task.trait}.{j}.weight", w
            yield f"head.{task.trait}.{j}.bias", b


def serialize_weights(weights: HeadWeights) -> bytes:
    tensors = list(_tensor_items(weights))
    meta = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "tool_version": TOOL_VERSION,
        "taxonomy_version": taxonomy.default_taxonomy().version,
        "taxonomy_hash": weights.taxonomy_hash,
        "spec": spec_to_dict(weights.spec),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
        "dtype": "float32",
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", WEIGHTS_FORMAT_VERSION, len(meta_bytes)), meta_bytes]
    for _, arr in tensors:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(weights: HeadWeights, path) -> None:
    Path(path).write_bytes(serialize_weights(weights))


def deserialize_weights(blob: bytes, expected_taxonomy_hash: str | None = None) -> HeadWeights:
    if blob[:4] != MAGIC:
        raise FormatError("not a weights file (bad magic)")
    if len(blob) < 12:
        raise FormatError("weights file truncated before header")
    version, meta_len = struct.unpack("<II", blob[4:12])
    if version != WEIGHTS_FORMAT_VERSION:
        raise FormatError(
            f"weights format version {version} unsupported (expected {WEIGHTS_FORMAT_VERSION})"
        )
    meta_end = 12 + meta_len
    if len(blob) < meta_end:
        raise FormatError("weights file truncated inside metadata")
    try:
        meta = json.loads(blob[12:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad weights metadata: {exc}") from exc
    expected = expected_taxonomy_hash or taxonomy.taxonomy_hash()
    if meta.get("taxonomy_hash") != expected:
        raise CompatibilityError(
            "weights were trained against a different taxonomy "
            f"({meta.get('taxonomy_hash')!r} != {expected!r})"
        )
    spec = spec_from_dict(meta["spec"])
    arrays = {}
    offset = meta_end
    for decl in meta["tensors"]:
        shape = tuple(decl["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"weights payload truncated at tensor {decl['name']!r}")
        arrays[decl["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after declared tensors")

    def take(name):
        try:
            return arrays[name]
        except KeyError:
            raise FormatError(f"missing tensor {name!r}") from None

    conv = [(take(f"conv.{i}.weight"), take(f"conv.{i}.bias")) for i in range(spec.conv_layers)]
    heads = {}
    for task in spec.tasks:
        stack = []
        j = 0
        while f"head.{task.trait}.{j}.weight" in arrays:
            stack.append((take(f"head.{task.trait}.{j}.weight"), take(f"head.{task.trait}.{j}.bias")))
            j += 1
        if not stack:
            raise FormatError(f"missing FC stack for task {task.trait!r}")
        heads[task.trait] = stack
    return HeadWeights(
        spec=spec,
        layer_logits=take("layer_logits"),
        conv=conv,
        heads=heads,
        taxonomy_hash=meta["taxonomy_hash"],
    )


def load_weights(path, expected_taxonomy_hash: str | None = None) -> HeadWeights:
    return deserialize_weights(Path(path).read_bytes(), expected_taxonomy_hash)


def weights_fingerprint(weights: HeadWeights) -> str:
    return hashlib.sha256(serialize_weights(weights)).hexdigest()
