"""TCP client for an external extractor process, plus a reference server.

The client opens one connection per request (one in-flight request per
connection); callers that want parallel extraction open parallel calls.
The server wraps any in-process backend behind the wire protocol and exists
so the protocol can be exercised end to end without a real foundation model.
"""

from __future__ import annotations

import socket
import socketserver
import threading

import numpy as np

from ..errors import BackendUnavailable, DomainError, ProtocolError
from .core import Backend, BackendDescriptor, LayerStack
from .wire import decode_request, decode_response, encode_request, encode_response


class RemoteBackend:
    """Extract features by round-tripping PCM through an external process."""

    requires_audio = True

    def __init__(
        self,
        host: str,
        port: int,
        descriptor: BackendDescriptor | None = None,
        timeout_s: float = 30.0,
    ):
        self.host = host
        self.port = port
        self.descriptor = descriptor or BackendDescriptor(
            name=f"remote:{host}:{port}", layers=1, dims=1, frame_rate_hz=50.0
        )
        self._declared = descriptor is not None
        self.timeout_s = timeout_s

    def encode(
        self,
        clip_id: str,
        waveform: np.ndarray | None,
        sample_rate: int = 16000,
        duration_s: float | None = None,
    ) -> LayerStack:
        if waveform is None:
            raise DomainError("remote backend needs the waveform, got None")
        try:
            conn = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
        except OSError as exc:
            raise BackendUnavailable(f"cannot reach extractor at {self.host}:{self.port}: {exc}") from exc
        try:
            with conn:
                conn.sendall(encode_request(clip_id, waveform, sample_rate))
                with conn.makefile("rb") as stream:
                    stack = decode_response(stream, expect_id=clip_id)
        except (OSError, TimeoutError) as exc:
            raise BackendUnavailable(f"extractor connection failed: {exc}") from exc
        if self._declared and (stack.layers, stack.dims) != (self.descriptor.layers, self.descriptor.dims):
            raise ProtocolError(
                f"stack shape ({stack.layers}, {stack.dims}) contradicts descriptor "
                f"({self.descriptor.layers}, {self.descriptor.dims})"
            )
        return stack


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        backend: Backend = self.server.backend  # type: ignore[attr-defined]
        stream = self.request.makefile("rb")
        try:
            while True:
                try:
                    clip_id, sample_rate, waveform = decode_request(stream)
                except ProtocolError:
                    return  # client went away or spoke garbage; drop the connection
                stack = backend.encode(clip_id, waveform, sample_rate)
                self.request.sendall(encode_response(clip_id, stack))
        finally:
            stream.close()


class BackendServer:
    """Serve a backend over the wire protocol on a background thread."""

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingTCPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.backend = backend  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    def start(self) -> tuple[str, int]:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
