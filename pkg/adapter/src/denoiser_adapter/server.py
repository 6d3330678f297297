"""Serve loop: requests in, responses out, errors never fatal.

The adapter answers every frame it can attribute to a peer message and
keeps going; only EOF stops it.  Garbage between frames is skipped (one
ERROR per gap), a bad version or message type is reported with the run
token recovered from the payload when possible, and payload parse
failures reply with the decoder's complaint.
"""

from __future__ import annotations

import logging
import socket

from . import protocol
from .session import SessionManager

log = logging.getLogger("denoiser_adapter")


def serve(reader, writer, backend) -> int:
    """Answer frames from ``reader`` until EOF; returns requests served."""
    frames = protocol.FrameReader(reader)
    sessions = SessionManager()
    served = 0
    while True:
        item = frames.next_frame()
        if item is None:
            return served
        skipped, version, msg_type, payload = item
        if skipped:
            log.warning("skipped %d bytes of garbage", skipped)
            _send(writer, protocol.encode_error(
                0, f"skipped {skipped} bytes before next frame"))
        token = protocol.peek_token(payload)
        if version != protocol.VERSION:
            _send(writer, protocol.encode_error(
                token, f"unsupported version {version}"))
            continue
        if msg_type != protocol.MSG_REQUEST:
            _send(writer, protocol.encode_error(
                token, f"unexpected message type {msg_type}"))
            continue
        try:
            req = protocol.decode_request(payload)
        except protocol.ProtocolError as exc:
            _send(writer, protocol.encode_error(token, str(exc)))
            continue
        session = sessions.get(req.run_token, req.conditioning)
        try:
            result = backend.denoise(
                session, req.t_index, req.t_value, req.tensor)
        except Exception as exc:  # backend trouble must not kill the loop
            log.exception("backend failed on run %d step %d",
                          req.run_token, req.t_index)
            _send(writer, protocol.encode_error(req.run_token, str(exc)))
            continue
        if result.shape != req.tensor.shape:
            _send(writer, protocol.encode_error(
                req.run_token,
                f"backend returned shape {result.shape}, "
                f"expected {req.tensor.shape}"))
            continue
        session.requests_served += 1
        served += 1
        _send(writer, protocol.encode_response(
            req.run_token, req.t_index, result))


def _send(writer, frame: bytes) -> None:
    writer.write(frame)
    writer.flush()


class TcpServer:
    """Sequential TCP front end; one connection served at a time."""

    def __init__(self, host: str, port: int, backend):
        self._backend = backend
        self._sock = socket.create_server((host, port))
        self._closed = False
        self._active = None

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def serve_forever(self) -> None:
        log.info("listening on %s:%d", *self._sock.getsockname()[:2])
        while not self._closed:
            try:
                conn, peer = self._sock.accept()
            except OSError:
                if self._closed:
                    return
                raise
            log.info("peer connected: %s:%d", *peer[:2])
            self._active = conn
            with conn:
                reader = conn.makefile("rb")
                writer = conn.makefile("wb")
                try:
                    served = serve(reader, writer, self._backend)
                except (BrokenPipeError, ConnectionResetError, OSError):
                    served = -1
                log.info("peer gone (%s requests)", served)
            self._active = None

    def close(self) -> None:
        self._closed = True
        active = self._active
        if active is not None:
            try:
                active.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        try:
            # closing alone leaves a blocked accept() sleeping on Linux
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
