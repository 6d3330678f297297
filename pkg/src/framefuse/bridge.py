"""Wire protocol for external denoisers, plus client transports and the
in-repo echo responder.

Framing (all little-endian):
    magic b"SMFD" | version u16 = 1 | msg_type u16 | payload_len u64 | payload

msg_type 1 REQUEST payload:
    run_token u64 | t_index u32 | t_value u32 | n_frames u32 | height u32
    | width u32 | channels u32 | conditioning_len u32 | conditioning bytes
    | tensor (n*h*w*c float32, frame-major, row-major, channel-interleaved)
msg_type 2 RESPONSE payload:
    run_token u64 | t_index u32 | n_frames u32 | tensor (same layout)
msg_type 3 ERROR payload:
    run_token u64 | utf-8 message

Every REQUEST receives exactly one RESPONSE or ERROR. Unknown versions are
rejected with ERROR. The responder here echoes request tensors back
unchanged; it exists so the engine's bridge path can be tested without any
model backend ("identity denoiser over the wire").
"""

from __future__ import annotations

import argparse
import struct
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

MAGIC = b"SMFD"
VERSION = 1
MSG_REQUEST = 1
MSG_RESPONSE = 2
MSG_ERROR = 3

HEADER = struct.Struct("<4sHHQ")
_REQ_HEAD = struct.Struct("<QIIIIIII")
_RESP_HEAD = struct.Struct("<QII")
_TOKEN = struct.Struct("<Q")


class ProtocolError(Exception):
    """Malformed or truncated message."""


class BridgeError(Exception):
    """Transport failure or remote-side error report."""


@dataclass(frozen=True)
class Request:
    run_token: int
    t_index: int
    t_value: int
    tensor: np.ndarray  # (n, h, w, c) float32
    conditioning: bytes


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        piece = stream.read(remaining)
        if not piece:
            break
        chunks.append(piece)
        remaining -= len(piece)
    return b"".join(chunks)


def write_message(stream, msg_type: int, payload: bytes, version: int = VERSION) -> None:
    stream.write(HEADER.pack(MAGIC, version, msg_type, len(payload)))
    stream.write(payload)
    stream.flush()


def read_message(stream) -> tuple[int, int, bytes] | None:
    """Read one framed message; None on clean end-of-stream."""
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError(
            f"truncated header: expected {HEADER.size} bytes, got {len(head)}"
        )
    magic, version, msg_type, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise ProtocolError(
            f"truncated payload: expected {length} bytes, got {len(payload)}"
        )
    return version, msg_type, payload


def encode_request(run_token: int, t_index: int, t_value: int,
                   tensor: np.ndarray, conditioning: bytes = b"") -> bytes:
    n, h, w, c = tensor.shape
    head = _REQ_HEAD.pack(run_token, t_index, t_value, n, h, w, c, len(conditioning))
    return head + conditioning + np.ascontiguousarray(tensor, "<f4").tobytes()


def decode_request(payload: bytes) -> Request:
    if len(payload) < _REQ_HEAD.size:
        raise ProtocolError(
            f"request header: expected {_REQ_HEAD.size} bytes, got {len(payload)}"
        )
    token, t_index, t_value, n, h, w, c, cond_len = _REQ_HEAD.unpack_from(payload)
    if min(n, h, w, c) < 1:
        raise ProtocolError(f"degenerate tensor dimensions {(n, h, w, c)}")
    offset = _REQ_HEAD.size
    if len(payload) < offset + cond_len:
        raise ProtocolError(
            f"conditioning: expected {cond_len} bytes, got {len(payload) - offset}"
        )
    conditioning = payload[offset:offset + cond_len]
    offset += cond_len
    expected = n * h * w * c * 4
    actual = len(payload) - offset
    if actual != expected:
        raise ProtocolError(f"tensor payload: expected {expected} bytes, got {actual}")
    tensor = np.frombuffer(payload, "<f4", offset=offset).reshape(n, h, w, c).copy()
    return Request(token, t_index, t_value, tensor, conditioning)


def encode_response(run_token: int, t_index: int, tensor: np.ndarray) -> bytes:
    head = _RESP_HEAD.pack(run_token, t_index, tensor.shape[0])
    return head + np.ascontiguousarray(tensor, "<f4").tobytes()


def decode_response(payload: bytes, height: int, width: int, channels: int):
    if len(payload) < _RESP_HEAD.size:
        raise ProtocolError(
            f"response header: expected {_RESP_HEAD.size} bytes, got {len(payload)}"
        )
    token, t_index, n = _RESP_HEAD.unpack_from(payload)
    expected = n * height * width * channels * 4
    actual = len(payload) - _RESP_HEAD.size
    if actual != expected:
        raise ProtocolError(f"tensor payload: expected {expected} bytes, got {actual}")
    tensor = (
        np.frombuffer(payload, "<f4", offset=_RESP_HEAD.size)
        .reshape(n, height, width, channels)
        .copy()
    )
    return token, t_index, tensor


def encode_error(run_token: int, message: str) -> bytes:
    return _TOKEN.pack(run_token) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < _TOKEN.size:
        raise ProtocolError("error payload shorter than its run token")
    (token,) = _TOKEN.unpack_from(payload)
    return token, payload[_TOKEN.size:].decode("utf-8", errors="replace")


class StreamBridgeClient:
    """One-request-one-reply client over a pair of binary streams."""

    def __init__(self, reader, writer):
        self._reader = reader
        self._writer = writer

    def request(self, run_token: int, t_index: int, t_value: int,
                tensor: np.ndarray, conditioning: bytes = b"") -> np.ndarray:
        write_message(
            self._writer, MSG_REQUEST,
            encode_request(run_token, t_index, t_value, tensor, conditioning),
        )
        msg = read_message(self._reader)
        if msg is None:
            raise BridgeError("denoiser closed the stream without replying")
        version, msg_type, payload = msg
        if version != VERSION:
            raise BridgeError(f"unsupported protocol version {version} in reply")
        if msg_type == MSG_ERROR:
            _, text = decode_error(payload)
            raise BridgeError(f"remote denoiser error: {text}")
        if msg_type != MSG_RESPONSE:
            raise BridgeError(f"unexpected message type {msg_type} in reply")
        token, t_back, reply = decode_response(payload, tensor.shape[1],
                                               tensor.shape[2], tensor.shape[3])
        if token != run_token or t_back != t_index:
            raise BridgeError(
                f"reply for run {token} step {t_back}, expected run {run_token} step {t_index}"
            )
        return reply

    def close(self):
        pass


class StdioBridgeClient(StreamBridgeClient):
    """Spawns the denoiser as a child process and talks over its stdio."""

    def __init__(self, command: list[str]):
        self._proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        super().__init__(self._proc.stdout, self._proc.stdin)

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class TcpBridgeClient(StreamBridgeClient):
    """Connects to a denoiser listening on a local TCP port."""

    def __init__(self, host: str, port: int):
        import socket

        self._sock = socket.create_connection((host, port))
        super().__init__(self._sock.makefile("rb"), self._sock.makefile("wb"))

    def close(self):
        self._reader.close()
        self._writer.close()
        self._sock.close()


def _peek_token(payload: bytes) -> int:
    return _TOKEN.unpack_from(payload)[0] if len(payload) >= _TOKEN.size else 0


def serve_echo(reader, writer) -> None:
    """Reply to every REQUEST with a RESPONSE carrying the same tensor."""
    while True:
        try:
            msg = read_message(reader)
        except ProtocolError as exc:
            write_message(writer, MSG_ERROR, encode_error(0, str(exc)))
            return  # framing is lost; stop rather than guess
        if msg is None:
            return
        version, msg_type, payload = msg
        if version != VERSION:
            write_message(writer, MSG_ERROR,
                          encode_error(_peek_token(payload),
                                       f"unsupported version {version}"))
            continue
        if msg_type != MSG_REQUEST:
            write_message(writer, MSG_ERROR,
                          encode_error(_peek_token(payload),
                                       f"unexpected message type {msg_type}"))
            continue
        try:
            req = decode_request(payload)
        except ProtocolError as exc:
            write_message(writer, MSG_ERROR, encode_error(_peek_token(payload), str(exc)))
            continue
        write_message(writer, MSG_RESPONSE,
                      encode_response(req.run_token, req.t_index, req.tensor))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="framefuse.bridge", description="stdio echo responder for the denoiser protocol"
    )
    parser.add_argument("--mode", choices=["echo"], default="echo")
    parser.parse_args(argv)
    serve_echo(sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
