"""Wire protocol and client for an out-of-process scoring service.

Frames are newline-delimited JSON objects, one per line. Every request
carries a strictly increasing integer id; the response echoes it and is
matched by id, never by arrival order. Tensors travel as base64 of
little-endian float32 bytes with an explicit shape array, so round-trips
are bit-exact for every finite float32 value including signed zeros.

Ops: info, encode_text, encode_image, score_images, echo (debug), error.
The full frame grammar is documented in docs/protocol.md. The gradient
boundary sits at the pixel batch: score_images returns the loss and
dLoss/dpixels, so the service owns all model internals.

The same module provides the server scaffold (serve_stream / serve_tcp /
serve_stdio) used by the in-process mock service in tests; any external
service that speaks the same frames passes the identical client suite.
"""

from __future__ import annotations

import base64
import json
import os
import select
import socket
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ProtocolError, TransportError
from .objective import CompiledPrompts, ScoreReport

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 60.0
SERVICE_ADDR_ENV = "SKETCHOPT_SERVICE_ADDR"


def encode_tensor(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(arr.shape),
        "dtype": "f32",
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_tensor(obj: dict) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ProtocolError(f"malformed tensor object: {obj!r:.80}")
    if obj.get("dtype", "f32") != "f32":
        raise ProtocolError(f"unsupported tensor dtype {obj.get('dtype')!r}")
    raw = base64.b64decode(obj["data"])
    shape = tuple(int(s) for s in obj["shape"])
    expected = 4 * int(np.prod(shape)) if shape else 4
    if len(raw) != expected:
        raise ProtocolError(f"tensor byte length {len(raw)} != shape {shape} ({expected} bytes)")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def _dump_frame(obj: dict) -> bytes:
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


class _Transport:
    """One duplex byte stream carrying frames; concrete classes below."""

    def send_line(self, line: bytes) -> None:
        raise NotImplementedError

    def recv_line(self, timeout_s: float) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _SocketTransport(_Transport):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def send_line(self, line: bytes) -> None:
        try:
            self._sock.sendall(line)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_line(self, timeout_s: float) -> bytes:
        self._sock.settimeout(timeout_s)
        try:
            line = self._rfile.readline()
        except (OSError, socket.timeout) as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not line:
            raise TransportError("connection closed by the service")
        return line

    def close(self) -> None:
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass


class _SubprocessTransport(_Transport):
    def __init__(self, command: list[str]):
        try:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=sys.stderr.fileno()
                if hasattr(sys.stderr, "fileno") else None,
            )
        except OSError as exc:
            raise TransportError(f"could not launch service {command!r}: {exc}") from exc

    def send_line(self, line: bytes) -> None:
        if self._proc.poll() is not None:
            raise TransportError(f"service exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_line(self, timeout_s: float) -> bytes:
        ready, _, _ = select.select([self._proc.stdout], [], [], timeout_s)
        if not ready:
            raise TransportError(f"service response timed out after {timeout_s}s")
        line = self._proc.stdout.readline()
        if not line:
            raise TransportError(f"service closed its stdout (exit code {self._proc.poll()})")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class ServiceBackend:
    """ScoringBackend talking to an external service over the wire protocol.

    One in-flight request per connection; calls are serialized by design.
    """

    def __init__(self, transport: _Transport, timeout_s: float = DEFAULT_TIMEOUT_S,
                 expected_dim: int = 512):
        self._transport = transport
        self._timeout = timeout_s
        self._next_id = 0
        info = self._request("info", {})
        self.embedding_dim = int(info.get("dim", 0))
        self.model_id = str(info.get("model", "unknown"))
        if expected_dim and self.embedding_dim != expected_dim:
            raise ConfigError(
                f"service reports embedding dim {self.embedding_dim}, expected {expected_dim}"
            )

    @classmethod
    def connect(cls, address: str, timeout_s: float = DEFAULT_TIMEOUT_S,
                expected_dim: int = 512) -> "ServiceBackend":
        """Connect to host:port (TCP)."""
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"service address must be host:port, got {address!r}")
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout_s)
        except OSError as exc:
            raise TransportError(f"could not connect to {address}: {exc}") from exc
        return cls(_SocketTransport(sock), timeout_s, expected_dim)

    @classmethod
    def launch(cls, command: list[str], timeout_s: float = DEFAULT_TIMEOUT_S,
               expected_dim: int = 512) -> "ServiceBackend":
        """Spawn the service as a subprocess speaking frames over stdio."""
        return cls(_SubprocessTransport(command), timeout_s, expected_dim)

    @classmethod
    def from_env(cls, timeout_s: float = DEFAULT_TIMEOUT_S) -> "ServiceBackend":
        address = os.environ.get(SERVICE_ADDR_ENV)
        if not address:
            raise ConfigError(f"set {SERVICE_ADDR_ENV} or pass --service-addr")
        return cls.connect(address, timeout_s)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, op: str, payload: dict) -> dict:
        req_id = self._next_id
        self._next_id += 1
        frame = {"op": op, "id": req_id, **payload}
        self._transport.send_line(_dump_frame(frame))
        line = self._transport.recv_line(self._timeout)
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line for request id {req_id}: {exc}") from exc
        if not isinstance(resp, dict) or "id" not in resp:
            raise ProtocolError(f"response missing id (request id {req_id})")
        if resp["id"] != req_id:
            raise ProtocolError(f"response id {resp['id']} does not match request id {req_id}")
        if not resp.get("ok", False):
            err = resp.get("error", {})
            raise TransportError(
                f"service error for request id {req_id}: "
                f"{err.get('type', 'unknown')}: {err.get('message', '')}"
            )
        return resp

    def encode_text(self, texts: list[str]) -> np.ndarray:
        if not texts or any(not isinstance(t, str) or not t for t in texts):
            raise ContractError("texts must be non-empty strings")
        resp = self._request("encode_text", {"texts": list(texts)})
        emb = decode_tensor(resp["embeddings"]).astype(np.float64)
        if emb.shape != (len(texts), self.embedding_dim):
            raise ProtocolError(f"embeddings shape {emb.shape} != ({len(texts)}, {self.embedding_dim})")
        return emb

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        resp = self._request("encode_image", {"batch": encode_tensor(batch)})
        emb = decode_tensor(resp["embeddings"]).astype(np.float64)
        if emb.shape != (batch.shape[0], self.embedding_dim):
            raise ProtocolError(f"embeddings shape {emb.shape} != ({batch.shape[0]}, {self.embedding_dim})")
        return emb

    def score_images(self, batch: np.ndarray, prompts: CompiledPrompts):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise ContractError(f"batch must be (D, H, W, 3), got {batch.shape}")
        payload = {
            "batch": encode_tensor(batch),
            "positive_embeddings": encode_tensor(prompts.positive_embeddings),
            "positive_weights": prompts.positive_weights.tolist(),
            "negative_embeddings": encode_tensor(prompts.negative_embeddings),
            "negative_weights": prompts.negative_weights.tolist(),
            "negative_scale": prompts.negative_scale,
        }
        resp = self._request("score_images", payload)
        loss = float(resp["loss"])
        if not np.isfinite(loss):
            raise ProtocolError(f"service returned non-finite loss {loss}")
        grad = decode_tensor(resp["grad"]).astype(np.float64)
        if grad.shape != batch.shape:
            raise ProtocolError(f"gradient shape {grad.shape} != batch shape {batch.shape}")
        cos = decode_tensor(resp["cosines"]).astype(np.float64)
        n_prompts = len(prompts.positive_texts) + len(prompts.negative_texts)
        if cos.shape != (batch.shape[0], n_prompts):
            raise ProtocolError(f"cosines shape {cos.shape} != ({batch.shape[0]}, {n_prompts})")
        per_prompt = list(zip(prompts.labels, cos.mean(axis=0).tolist()))
        return ScoreReport(loss, batch.shape[0], per_prompt), grad

    def echo(self, tensor: np.ndarray) -> np.ndarray:
        """Debug op: the service returns the payload unchanged."""
        resp = self._request("echo", {"payload": encode_tensor(tensor)})
        return decode_tensor(resp["payload"])


# --- server scaffold -------------------------------------------------------


def _handle_frame(backend, frame: dict) -> dict:
    op = frame.get("op")
    req_id = frame.get("id")
    if not isinstance(req_id, int):
        return _error_frame(None, "protocol", "request id must be an integer")
    try:
        if op == "info":
            return {
                "id": req_id,
                "ok": True,
                "dim": backend.embedding_dim,
                "model": backend.model_id,
                "proto": PROTOCOL_VERSION,
            }
        if op == "encode_text":
            emb = backend.encode_text(list(frame["texts"]))
            return {"id": req_id, "ok": True, "embeddings": encode_tensor(emb)}
        if op == "encode_image":
            emb = backend.encode_images(decode_tensor(frame["batch"]).astype(np.float64))
            return {"id": req_id, "ok": True, "embeddings": encode_tensor(emb)}
        if op == "score_images":
            batch = decode_tensor(frame["batch"]).astype(np.float64)
            prompts = CompiledPrompts(
                positive_texts=[f"p{i}" for i in range(len(frame["positive_weights"]))],
                positive_weights=np.asarray(frame["positive_weights"], dtype=np.float64),
                positive_embeddings=decode_tensor(frame["positive_embeddings"]).astype(np.float64),
                negative_texts=[f"n{i}" for i in range(len(frame["negative_weights"]))],
                negative_weights=np.asarray(frame["negative_weights"], dtype=np.float64),
                negative_embeddings=decode_tensor(frame["negative_embeddings"]).astype(np.float64),
                negative_scale=float(frame["negative_scale"]),
            )
            report, grad = backend.score_images(batch, prompts)
            # per-copy cosines, not just the report's means
            embs = backend.encode_images(batch)
            all_prompt_embs = np.concatenate(
                [prompts.positive_embeddings, prompts.negative_embeddings]
            )
            cos = embs @ all_prompt_embs.T
            return {
                "id": req_id,
                "ok": True,
                "loss": report.loss,
                "cosines": encode_tensor(cos),
                "grad": encode_tensor(grad),
            }
        if op == "echo":
            return {"id": req_id, "ok": True, "payload": frame["payload"]}
        return _error_frame(req_id, "protocol", f"unknown op {op!r}")
    except Exception as exc:  # per-request failure: error frame, server stays up
        return _error_frame(req_id, type(exc).__name__, str(exc))


def _error_frame(req_id, err_type: str, message: str) -> dict:
    return {"id": req_id, "ok": False, "error": {"type": err_type, "message": message}}


def serve_stream(backend, rfile, wfile) -> None:
    """Answer frames on a byte stream until EOF. Used by the mock service."""
    for line in rfile:
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            resp = _error_frame(None, "protocol", f"malformed frame: {exc}")
        else:
            resp = _handle_frame(backend, frame)
        wfile.write(_dump_frame(resp))
        wfile.flush()


def serve_tcp(backend, host: str = "127.0.0.1", port: int = 0, ready_callback=None):
    """Serve one connection at a time over TCP; blocks forever."""
    srv = socket.create_server((host, port))
    if ready_callback is not None:
        ready_callback(srv.getsockname())
    while True:
        conn, _ = srv.accept()
        with conn:
            serve_stream(backend, conn.makefile("rb"), conn.makefile("wb"))


def serve_stdio(backend) -> None:
    serve_stream(backend, sys.stdin.buffer, sys.stdout.buffer)


def main(argv=None) -> int:
    """Run the mock scoring backend as a protocol service (for tests/demos)."""
    import argparse

    parser = argparse.ArgumentParser(description="serve the mock scoring backend")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--port", type=int, default=None, help="TCP port (omit for stdio)")
    args = parser.parse_args(argv)

    from .objective import MockBackend

    backend = MockBackend(args.seed)
    if args.port is not None:
        serve_tcp(backend, port=args.port,
                  ready_callback=lambda addr: print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr))
    else:
        serve_stdio(backend)
    return 0


if __name__ == "__main__":
    sys.exit(main())
