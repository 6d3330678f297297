"""Wire protocol for the frame-denoiser bridge.

Every message is a little-endian frame::

    magic    4 bytes  b"SMFD"
    version  u16      currently 1
    msg_type u16      1 = REQUEST, 2 = RESPONSE, 3 = ERROR
    length   u64      payload byte count
    payload  length bytes

REQUEST payload::

    run_token u64 | t_index u32 | t_value u32
    | n u32 | h u32 | w u32 | c u32
    | cond_len u32 | cond_len bytes of conditioning
    | n*h*w*c float32 tensor values

RESPONSE payload is ``run_token | t_index u32 | n u32`` followed by the
denoised tensor; ERROR payload is ``run_token`` followed by a UTF-8
message.  This module is self-contained on purpose: the adapter must
interoperate with foreign peers at the byte level, so nothing here is
shared with any particular engine implementation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SMFD"
VERSION = 1

MSG_REQUEST = 1
MSG_RESPONSE = 2
MSG_ERROR = 3

_HEADER = struct.Struct("<4sHHQ")
_REQ_FIXED = struct.Struct("<QIIIIIII")
_RESP_FIXED = struct.Struct("<QII")

HEADER_SIZE = _HEADER.size


class ProtocolError(Exception):
    """A frame arrived but its payload does not parse."""


@dataclass
class Request:
    run_token: int
    t_index: int
    t_value: int
    conditioning: bytes
    tensor: np.ndarray  # (n, h, w, c) float32


def encode_request(req: Request) -> bytes:
    data = np.ascontiguousarray(req.tensor, dtype="<f4")
    if data.ndim != 4:
        raise ValueError(f"request tensor must be 4-d, got shape {data.shape}")
    n, h, w, c = data.shape
    payload = (
        _REQ_FIXED.pack(req.run_token, req.t_index, req.t_value, n, h, w, c,
                        len(req.conditioning))
        + req.conditioning
        + data.tobytes()
    )
    return _HEADER.pack(MAGIC, VERSION, MSG_REQUEST, len(payload)) + payload


def decode_request(payload: bytes) -> Request:
    if len(payload) < _REQ_FIXED.size:
        raise ProtocolError(
            f"request payload too short: expected at least {_REQ_FIXED.size} "
            f"bytes, got {len(payload)}")
    token, t_index, t_value, n, h, w, c, cond_len = _REQ_FIXED.unpack_from(payload)
    if min(n, h, w, c) == 0:
        raise ProtocolError(f"zero tensor dimension: {n}x{h}x{w}x{c}")
    offset = _REQ_FIXED.size
    cond = payload[offset:offset + cond_len]
    if len(cond) != cond_len:
        raise ProtocolError(
            f"conditioning overruns payload: expected {cond_len} bytes, "
            f"got {len(cond)}")
    body = payload[offset + cond_len:]
    expected = n * h * w * c * 4
    if len(body) != expected:
        raise ProtocolError(
            f"tensor: expected {expected} bytes, got {len(body)}")
    tensor = np.frombuffer(body, dtype="<f4").reshape(n, h, w, c).copy()
    return Request(token, t_index, t_value, bytes(cond), tensor)


def encode_response(run_token: int, t_index: int, tensor: np.ndarray) -> bytes:
    data = np.ascontiguousarray(tensor, dtype="<f4")
    payload = _RESP_FIXED.pack(run_token, t_index, data.shape[0]) + data.tobytes()
    return _HEADER.pack(MAGIC, VERSION, MSG_RESPONSE, len(payload)) + payload


def encode_error(run_token: int, message: str) -> bytes:
    payload = struct.pack("<Q", run_token) + message.encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, MSG_ERROR, len(payload)) + payload


def peek_token(payload: bytes) -> int:
    """Best-effort run token for error replies to unparseable payloads."""
    if len(payload) >= 8:
        return struct.unpack_from("<Q", payload)[0]
    return 0


class FrameReader:
    """Pulls frames off a byte stream, resynchronizing on garbage.

    ``next_frame`` returns ``(skipped, version, msg_type, payload)`` where
    ``skipped`` is how many bytes were discarded hunting for the magic, or
    ``None`` once the stream is exhausted.  A frame whose payload is cut
    off by EOF is dropped silently; the peer is gone either way.
    """

    _CHUNK = 65536

    def __init__(self, stream):
        # read1 blocks only until some bytes arrive; plain read(n) on a
        # buffered pipe would stall waiting for the full chunk
        self._read = getattr(stream, "read1", stream.read)
        self._buf = bytearray()
        self._eof = False

    def _fill(self, need: int) -> bool:
        while len(self._buf) < need and not self._eof:
            chunk = self._read(self._CHUNK)
            if not chunk:
                self._eof = True
                break
            self._buf.extend(chunk)
        return len(self._buf) >= need

    def _sync(self) -> int:
        """Discard bytes until the buffer starts with MAGIC; return count."""
        skipped = 0
        while True:
            if not self._fill(len(MAGIC)):
                skipped += len(self._buf)
                self._buf.clear()
                return skipped
            pos = self._buf.find(MAGIC)
            if pos >= 0:
                skipped += pos
                del self._buf[:pos]
                return skipped
            # keep a tail shorter than the magic in case it straddles reads
            keep = len(MAGIC) - 1
            skipped += len(self._buf) - keep
            del self._buf[:-keep]
            if self._eof:
                skipped += len(self._buf)
                self._buf.clear()
                return skipped

    def next_frame(self):
        skipped = self._sync()
        if not self._fill(HEADER_SIZE):
            return None
        _, version, msg_type, length = _HEADER.unpack_from(self._buf)
        if not self._fill(HEADER_SIZE + length):
            return None
        payload = bytes(self._buf[HEADER_SIZE:HEADER_SIZE + length])
        del self._buf[:HEADER_SIZE + length]
        return skipped, version, msg_type, payload
