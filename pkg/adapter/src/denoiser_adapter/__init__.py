"""External denoiser process for the SMFD frame bridge."""

from .backends import BackendUnavailable, DiffusionBackend, EchoBackend, make_backend
from .protocol import (MSG_ERROR, MSG_REQUEST, MSG_RESPONSE, ProtocolError,
                       Request, decode_request, encode_error, encode_request,
                       encode_response)
from .server import TcpServer, serve
from .session import BridgeSession, Conditioning, SessionManager

__all__ = [
    "BackendUnavailable", "BridgeSession", "Conditioning", "DiffusionBackend",
    "EchoBackend", "MSG_ERROR", "MSG_REQUEST", "MSG_RESPONSE", "ProtocolError",
    "Request", "SessionManager", "TcpServer", "decode_request", "encode_error",
    "encode_request", "encode_response", "make_backend", "serve",
]
