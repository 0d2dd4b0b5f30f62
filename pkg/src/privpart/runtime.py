"""Remote inference server and local client speaking the frame protocol in ``wire``."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from typing import Callable

import numpy as np

from .nn import Network
from .wire import (DEFAULT_MAX_PAYLOAD, HEADER, ErrorCode, MessageType, WireError,
                   decode_error, decode_tensor, encode_error, encode_frame, encode_tensor,
                   parse_header)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0
_POLL = 0.2


class NetworkError(OSError):
    """Connection failure, timeout, or a peer that broke the protocol."""


class RemoteError(RuntimeError):
    """The server answered with an ERROR frame."""

    def __init__(self, code: int, message: str):
        name = ErrorCode(code).name if code in ErrorCode._value2member_map_ else str(code)
        super().__init__(f"remote error {name}: {message}")
        self.code = code
        self.reason = message


class _Closed(Exception):
    pass


class _Handler(socketserver.BaseRequestHandler):
    server: "_Server"

    def setup(self):
        self.request.settimeout(_POLL)

    def _recv_exact(self, n: int, at_boundary: bool) -> bytes:
        chunks, got, idle = [], 0, 0.0
        while got < n:
            try:
                chunk = self.request.recv(min(n - got, 1 << 20))
            except socket.timeout:
                idle += _POLL
                if (at_boundary and got == 0 and self.server.stopping.is_set()) \
                        or idle >= self.server.idle_timeout:
                    raise _Closed
                continue
            if not chunk:
                raise _Closed
            idle = 0.0
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _discard(self, n: int) -> None:
        while n > 0:
            n -= len(self._recv_exact(min(n, 1 << 20), at_boundary=False))

    def _send(self, data: bytes) -> None:
        self.request.sendall(data)

    def _close_gracefully(self, limit: int = 1 << 20) -> None:
        """Half-close and swallow what the peer already sent so close() does not reset."""
        try:
            self.request.shutdown(socket.SHUT_WR)
            idle = 0.0
            while limit > 0 and idle < 1.0:
                try:
                    chunk = self.request.recv(min(limit, 65536))
                except socket.timeout:
                    idle += _POLL
                    continue
                if not chunk:
                    break
                limit -= len(chunk)
        except OSError:
            pass

    def handle(self):
        srv = self.server
        try:
            while True:
                header = self._recv_exact(HEADER.size, at_boundary=True)
                try:
                    kind, length = parse_header(header)
                except WireError as e:
                    self._send(encode_error(e.code, str(e)))
                    self._close_gracefully()  # stream cannot be resynchronised
                    return
                if length > srv.max_payload:
                    self._send(encode_error(ErrorCode.OVERSIZED,
                                            f"payload {length} exceeds cap {srv.max_payload}"))
                    self._discard(length)
                    continue
                payload = self._recv_exact(length, at_boundary=False)
                self._send(srv.respond(kind, payload))
        except (_Closed, ConnectionError, OSError):
            pass


class _Server(socketserver.ThreadingMixIn, socketserver.TCPServer):
    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True

    def __init__(self, address, remote: Network, max_concurrent: int, max_payload: int,
                 idle_timeout: float):
        self.remote = remote
        self.max_payload = int(max_payload)
        self.idle_timeout = float(idle_timeout)
        self.slots = threading.BoundedSemaphore(max_concurrent)
        self.stopping = threading.Event()
        super().__init__(address, _Handler)

    def process_request(self, request, client_address):
        if not self.slots.acquire(blocking=False):
            try:
                request.sendall(encode_error(ErrorCode.BUSY, "too many connections"))
            except OSError:
                pass
            self.shutdown_request(request)
            return
        super().process_request(request, client_address)

    def process_request_thread(self, request, client_address):
        try:
            super().process_request_thread(request, client_address)
        finally:
            self.slots.release()

    def respond(self, kind: int, payload: bytes) -> bytes:
        if kind == MessageType.PING:
            return encode_frame(MessageType.PONG, payload)
        if kind == MessageType.INFER_REQ:
            try:
                h = decode_tensor(payload)
            except WireError as e:
                return encode_error(e.code, str(e))
            want = self.remote.input_shape
            if h.ndim != len(want) + 1 or tuple(h.shape[1:]) != want:
                return encode_error(ErrorCode.SHAPE_MISMATCH,
                                    f"expected (N, {', '.join(map(str, want))}), got {h.shape}")
            try:
                logits = self.remote.forward(h.astype(self.remote.dtype, copy=False),
                                             train=False).data
                return encode_frame(MessageType.INFER_RESP,
                                    encode_tensor(np.asarray(logits, dtype=np.float32)))
            except Exception as e:  # never let a request kill the connection thread
                log.exception("inference failed")
                return encode_error(ErrorCode.INTERNAL, type(e).__name__)
        if kind in MessageType._value2member_map_:
            return encode_error(ErrorCode.UNEXPECTED_TYPE,
                                f"{MessageType(kind).name} is not a request")
        return encode_error(ErrorCode.UNKNOWN_TYPE, f"unknown message type 0x{kind:02x}")


class RemoteServer:
    """Handle on a running inference server (also a context manager)."""

    def __init__(self, server: _Server):
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever,
                                        kwargs={"poll_interval": _POLL}, daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def shutdown(self) -> None:
        """Stop accepting, let in-flight requests finish, then close."""
        self._server.stopping.set()
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    def serve_until_interrupted(self) -> None:
        try:
            while self._thread.is_alive():
                self._thread.join(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve_remote(remote: Network, host: str = "127.0.0.1", port: int = 0,
                 max_concurrent: int = 8, max_payload: int = DEFAULT_MAX_PAYLOAD,
                 hidden_shape=None, idle_timeout: float = 60.0) -> RemoteServer:
    """Start serving ``remote`` in background threads; ``port=0`` picks a free port."""
    if hidden_shape is not None and tuple(hidden_shape) != tuple(remote.input_shape):
        raise ValueError(f"hidden shape {tuple(hidden_shape)} does not match remote input "
                         f"{remote.input_shape}")
    if max_concurrent < 1:
        raise ValueError("max_concurrent must be at least 1")
    try:
        server = _Server((host, port), remote.copy().eval(), max_concurrent, max_payload,
                         idle_timeout)
    except OSError as e:
        raise NetworkError(f"cannot bind {host}:{port}: {e}") from e
    return RemoteServer(server)


class RemoteClient:
    """Blocking client for one connection. ``tap`` sees every byte string sent."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT,
                 tap: Callable[[bytes], None] | None = None):
        self.tap = tap
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise NetworkError(f"cannot connect to {host}:{port}: {e}") from e
        self.sock.settimeout(timeout)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout as e:
                raise NetworkError("timed out waiting for the server") from e
            except OSError as e:
                raise NetworkError(str(e)) from e
            if not chunk:
                raise NetworkError("server closed the connection")
            buf += chunk
        return bytes(buf)

    def request(self, kind: int, payload: bytes = b"") -> tuple[int, bytes]:
        frame = encode_frame(kind, payload)
        if self.tap is not None:
            self.tap(frame)
        try:
            self.sock.sendall(frame)
        except OSError as e:
            raise NetworkError(str(e)) from e
        try:
            rkind, length = parse_header(self._recv_exact(HEADER.size))
        except WireError as e:
            raise NetworkError(f"bad response: {e}") from e
        return rkind, self._recv_exact(length)

    def ping(self, payload: bytes = b"") -> bytes:
        kind, body = self.request(MessageType.PING, payload)
        self._raise_for(kind, body, MessageType.PONG)
        return body

    def infer_hidden(self, h) -> np.ndarray:
        """Send activations, return the remote logits."""
        kind, body = self.request(MessageType.INFER_REQ, encode_tensor(h))
        self._raise_for(kind, body, MessageType.INFER_RESP)
        try:
            return decode_tensor(body)
        except WireError as e:
            raise NetworkError(f"bad response tensor: {e}") from e

    @staticmethod
    def _raise_for(kind: int, body: bytes, expected: MessageType) -> None:
        if kind == MessageType.ERROR:
            raise RemoteError(*decode_error(body))
        if kind != expected:
            raise NetworkError(f"expected {expected.name}, got type 0x{kind:02x}")


def infer(local: Network, address: tuple[str, int], images, timeout: float = DEFAULT_TIMEOUT,
          tap: Callable[[bytes], None] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run ``local`` here, the rest remotely; returns (labels, logits).

    Only the encoded activations leave this process.
    """
    x = np.asarray(images, dtype=local.dtype)
    h = np.asarray(local.forward(x, train=False).data, dtype=np.float32)
    with RemoteClient(*address, timeout=timeout, tap=tap) as client:
        logits = client.infer_hidden(h)
    return np.argmax(logits, axis=1), logits
