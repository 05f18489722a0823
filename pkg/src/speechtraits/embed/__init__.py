"""Feature-extraction boundary: layer stacks, backends, and the wire protocol."""

from .core import Backend, BackendDescriptor, LayerStack
from .remote import BackendServer, RemoteBackend
from .synthetic import DEFAULT_DESCRIPTOR, SyntheticBackend, synth_encode
from .wire import (
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)

__all__ = [
    "Backend",
    "BackendDescriptor",
    "BackendServer",
    "DEFAULT_DESCRIPTOR",
    "LayerStack",
    "RemoteBackend",
    "SyntheticBackend",
    "decode_request",
    "decode_response",
    "encode_request",
    "encode_response",
    "synth_encode",
]
