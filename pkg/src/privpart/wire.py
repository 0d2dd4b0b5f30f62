"""Binary framing for split inference.

A frame is ``b"PPW1"``, a one-byte message type, a little-endian u32 payload
length and the payload. Tensors travel as a dtype tag, a rank byte, one u32
per dimension and the little-endian float32 data.
"""

from __future__ import annotations

import enum
import struct

import numpy as np

MAGIC = b"PPW1"
HEADER = struct.Struct("<4sBI")
MAX_RANK = 8
DEFAULT_MAX_PAYLOAD = 64 * 2 ** 20
DTYPE_F32 = 1


class MessageType(enum.IntEnum):
    INFER_REQ = 0x01
    INFER_RESP = 0x02
    ERROR = 0x03
    PING = 0x04
    PONG = 0x05


class ErrorCode(enum.IntEnum):
    BAD_MAGIC = 1
    UNKNOWN_TYPE = 2
    OVERSIZED = 3
    BAD_TENSOR = 4
    SHAPE_MISMATCH = 5
    UNEXPECTED_TYPE = 6
    BUSY = 7
    INTERNAL = 8


class WireError(ValueError):
    """Malformed frame or tensor encoding."""

    def __init__(self, code: ErrorCode, message: str):
        super().__init__(message)
        self.code = ErrorCode(code)


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0:
        raise WireError(ErrorCode.BAD_TENSOR, "rank 0 tensors are not encodable")
    if arr.ndim > MAX_RANK:
        raise WireError(ErrorCode.BAD_TENSOR, f"rank {arr.ndim} exceeds {MAX_RANK}")
    if 0 in arr.shape:
        raise WireError(ErrorCode.BAD_TENSOR, f"zero-sized dimension in {arr.shape}")
    if arr.dtype != np.float32:
        raise WireError(ErrorCode.BAD_TENSOR, f"only float32 is encodable, got {arr.dtype}")
    head = struct.pack(f"<BB{arr.ndim}I", DTYPE_F32, arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(payload: bytes) -> np.ndarray:
    """Inverse of :func:`encode_tensor`; all lengths are checked before allocating."""
    if len(payload) < 2:
        raise WireError(ErrorCode.BAD_TENSOR, "truncated tensor header")
    tag, rank = payload[0], payload[1]
    if tag != DTYPE_F32:
        raise WireError(ErrorCode.BAD_TENSOR, f"unknown dtype tag {tag}")
    if rank == 0 or rank > MAX_RANK:
        raise WireError(ErrorCode.BAD_TENSOR, f"rank {rank} outside 1..{MAX_RANK}")
    end = 2 + 4 * rank
    if len(payload) < end:
        raise WireError(ErrorCode.BAD_TENSOR, "truncated tensor dims")
    dims = struct.unpack(f"<{rank}I", payload[2:end])
    if 0 in dims:
        raise WireError(ErrorCode.BAD_TENSOR, f"zero dimension in {dims}")
    count = 1
    for d in dims:  # python ints, so no overflow; bail out once it cannot fit
        count *= d
        if 4 * count > len(payload) - end:
            break
    if 4 * count != len(payload) - end:
        raise WireError(ErrorCode.BAD_TENSOR,
                        f"dims {dims} need {4 * count} bytes, payload has {len(payload) - end}")
    return np.frombuffer(payload, dtype="<f4", offset=end).reshape(dims).astype(np.float32)


def encode_frame(kind: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, int(kind), len(payload)) + payload


def parse_header(header: bytes) -> tuple[int, int]:
    """Return (message type, payload length); raises on bad magic."""
    if len(header) != HEADER.size:
        raise WireError(ErrorCode.BAD_MAGIC, "truncated frame header")
    magic, kind, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise WireError(ErrorCode.BAD_MAGIC, f"bad magic {magic!r}")
    return kind, length


def decode_frame(data: bytes) -> tuple[int, bytes]:
    """Parse one complete frame held in memory."""
    kind, length = parse_header(data[:HEADER.size])
    payload = data[HEADER.size:]
    if len(payload) != length:
        raise WireError(ErrorCode.BAD_TENSOR,
                        f"declared payload {length} bytes, got {len(payload)}")
    return kind, payload


def encode_error(code: ErrorCode, message: str) -> bytes:
    return encode_frame(MessageType.ERROR, bytes([int(code)]) + message.encode("utf-8"))


def decode_error(payload: bytes) -> tuple[int, str]:
    if not payload:
        return ErrorCode.INTERNAL, ""
    return payload[0], payload[1:].decode("utf-8", errors="replace")
