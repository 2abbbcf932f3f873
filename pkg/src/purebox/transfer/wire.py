"""Wire format for external label oracles.

Request: three little-endian uint32 (C, H, W) followed by C*H*W little-endian
float32 pixel values in CHW order. Response: the class index as ASCII digits,
optionally newline-terminated.
"""
from __future__ import annotations

import struct
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer
from typing import BinaryIO, Callable

import numpy as np

HEADER = struct.Struct("<3I")


def encode_request(image) -> bytes:
    arr = np.ascontiguousarray(np.asarray(image, dtype="<f4"))
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {arr.shape}")
    return HEADER.pack(*arr.shape) + arr.tobytes()


def decode_request(payload: bytes) -> np.ndarray:
    c, h, w = HEADER.unpack_from(payload)
    body = payload[HEADER.size:]
    if len(body) != 4 * c * h * w:
        raise ValueError(f"payload holds {len(body)} bytes, header announces {4 * c * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float32)


def encode_response(label: int) -> bytes:
    return f"{int(label)}\n".encode("ascii")


def decode_response(raw: bytes) -> int:
    return int(raw.decode("ascii").strip())


def read_request(stream: BinaryIO) -> np.ndarray | None:
    head = stream.read(HEADER.size)
    if not head:
        return None
    if len(head) != HEADER.size:
        raise EOFError("truncated request header")
    c, h, w = HEADER.unpack(head)
    body = stream.read(4 * c * h * w)
    return decode_request(head + body)


def serve_stdio(label_fn: Callable[[np.ndarray], int], stdin: BinaryIO | None = None,
                stdout: BinaryIO | None = None) -> None:
    """Answer framed requests on stdin until EOF (the subprocess side of the contract)."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while (image := read_request(stdin)) is not None:
        stdout.write(encode_response(label_fn(image)))
        stdout.flush()


def make_http_server(label_fn: Callable[[np.ndarray], int], host: str = "127.0.0.1", port: int = 0) -> HTTPServer:
    """Single-threaded HTTP server answering POSTed requests; serves one query at a time."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = encode_response(label_fn(decode_request(self.rfile.read(length))))
                self.send_response(200)
            except Exception as exc:  # report, don't kill the server
                body = str(exc).encode()
                self.send_response(400)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    return HTTPServer((host, port), Handler)
