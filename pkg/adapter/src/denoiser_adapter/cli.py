"""Command line front end.

stdio transport speaks the protocol on stdin/stdout, so all logging goes
to stderr.  TCP binds and serves connections one after another.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import BackendUnavailable, make_backend
from .server import TcpServer, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denoiser-adapter",
        description="External denoiser process speaking the SMFD bridge protocol")
    parser.add_argument("--mode", choices=("echo", "diffusion"), default="echo",
                        help="echo returns frames unchanged; diffusion runs a "
                             "latent text-to-image model")
    parser.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8790)
    parser.add_argument("--model", default="random-tiny",
                        help="diffusers model id, or 'random-tiny' for an "
                             "untrained in-memory pipeline")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        backend = make_backend(args.mode, args.model, args.device)
    except BackendUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.transport == "stdio":
        serve(sys.stdin.buffer, sys.stdout.buffer, backend)
        return 0
    server = TcpServer(args.host, args.port, backend)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
