import json
import socket
import threading

import numpy as np
import pytest

from sketchopt.errors import ConfigError, ProtocolError, TransportError
from sketchopt.objective import MockBackend, PromptSet, compile_prompts
from sketchopt.protocol import (
    ServiceBackend,
    _SocketTransport,
    decode_tensor,
    encode_tensor,
    serve_stream,
)

from conformance import ServiceContract


def _loopback_client(backend) -> ServiceBackend:
    server_sock, client_sock = socket.socketpair()
    thread = threading.Thread(
        target=serve_stream,
        args=(backend, server_sock.makefile("rb"), server_sock.makefile("wb")),
        daemon=True,
    )
    thread.start()
    return ServiceBackend(_SocketTransport(client_sock), timeout_s=10.0)


class TestTensorCodec:
    def test_round_trip_random_is_bit_exact(self):
        x = np.random.default_rng(0).normal(size=(3, 5, 2)).astype(np.float32)
        y = decode_tensor(encode_tensor(x))
        assert y.shape == x.shape
        assert y.tobytes() == x.tobytes()

    def test_signed_zeros_and_extremes_survive(self):
        x = np.array(
            [0.0, -0.0, np.finfo(np.float32).max, np.finfo(np.float32).tiny, -1e-45, 1.0],
            dtype=np.float32,
        )
        y = decode_tensor(encode_tensor(x))
        assert y.tobytes() == x.tobytes()
        assert np.signbit(y[1]) and not np.signbit(y[0])

    def test_float64_input_is_quantized_to_f32(self):
        x = np.array([1.0 / 3.0])
        y = decode_tensor(encode_tensor(x))
        assert y.dtype == np.float32

    def test_byte_length_mismatch_rejected(self):
        obj = encode_tensor(np.zeros(4, dtype=np.float32))
        obj["shape"] = [5]
        with pytest.raises(ProtocolError):
            decode_tensor(obj)

    def test_malformed_object_rejected(self):
        with pytest.raises(ProtocolError):
            decode_tensor({"data": "AAAA"})


class TestClientBehavior:
    def test_connection_refused_is_transport_error(self):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            free_port = probe.getsockname()[1]
        with pytest.raises(TransportError):
            ServiceBackend.connect(f"127.0.0.1:{free_port}", timeout_s=0.5)

    def test_bad_address_rejected(self):
        with pytest.raises(ConfigError):
            ServiceBackend.connect("not-an-address")

    def _rigged_client(self, reply_fn):
        """Client whose server answers each line via reply_fn(frame)->str."""
        server_sock, client_sock = socket.socketpair()

        def serve():
            rfile = server_sock.makefile("rb")
            wfile = server_sock.makefile("wb")
            for line in rfile:
                wfile.write(reply_fn(json.loads(line)).encode() + b"\n")
                wfile.flush()

        threading.Thread(target=serve, daemon=True).start()
        return client_sock

    def test_malformed_response_names_request_id(self):
        sock = self._rigged_client(lambda f: '{"id": ' if f["op"] != "info"
                                   else json.dumps({"id": f["id"], "ok": True, "dim": 512, "model": "m"}))
        client = ServiceBackend(_SocketTransport(sock), timeout_s=5.0)
        with pytest.raises(ProtocolError, match="id 1"):
            client.encode_text(["x"])

    def test_mismatched_id_detected(self):
        def reply(frame):
            if frame["op"] == "info":
                return json.dumps({"id": frame["id"], "ok": True, "dim": 512, "model": "m"})
            return json.dumps({"id": frame["id"] + 7, "ok": True})

        client = ServiceBackend(_SocketTransport(self._rigged_client(reply)), timeout_s=5.0)
        with pytest.raises(ProtocolError, match="does not match"):
            client.encode_text(["x"])

    def test_error_frame_surfaces_message_verbatim(self):
        def reply(frame):
            if frame["op"] == "info":
                return json.dumps({"id": frame["id"], "ok": True, "dim": 512, "model": "m"})
            return json.dumps(
                {"id": frame["id"], "ok": False,
                 "error": {"type": "ValueError", "message": "synthetic service failure"}}
            )

        client = ServiceBackend(_SocketTransport(self._rigged_client(reply)), timeout_s=5.0)
        with pytest.raises(TransportError, match="synthetic service failure"):
            client.encode_text(["x"])

    def test_wrong_gradient_shape_rejected(self):
        mock = MockBackend(0)

        def reply(frame):
            if frame["op"] == "info":
                return json.dumps({"id": frame["id"], "ok": True, "dim": 512, "model": "m"})
            if frame["op"] == "encode_text":
                return json.dumps({"id": frame["id"], "ok": True,
                                   "embeddings": encode_tensor(mock.encode_text(frame["texts"]))})
            return json.dumps(
                {"id": frame["id"], "ok": True, "loss": 0.0,
                 "cosines": encode_tensor(np.zeros((1, 1), dtype=np.float32)),
                 "grad": encode_tensor(np.zeros((1, 8, 8, 3), dtype=np.float32))}
            )

        client = ServiceBackend(_SocketTransport(self._rigged_client(reply)), timeout_s=5.0)
        prompts = compile_prompts(client, PromptSet(positives=["x"]))
        with pytest.raises(ProtocolError, match="gradient shape"):
            client.score_images(np.zeros((1, 32, 32, 3)), prompts)

    def test_dim_mismatch_is_config_error(self):
        def reply(frame):
            return json.dumps({"id": frame["id"], "ok": True, "dim": 384, "model": "m"})

        with pytest.raises(ConfigError, match="384"):
            ServiceBackend(_SocketTransport(self._rigged_client(reply)), timeout_s=5.0)

    def test_request_ids_strictly_increase(self):
        seen = []

        def reply(frame):
            seen.append(frame["id"])
            if frame["op"] == "info":
                return json.dumps({"id": frame["id"], "ok": True, "dim": 512, "model": "m"})
            return json.dumps({"id": frame["id"], "ok": True, "payload": frame["payload"]})

        client = ServiceBackend(_SocketTransport(self._rigged_client(reply)), timeout_s=5.0)
        for _ in range(3):
            client.echo(np.zeros(1, dtype=np.float32))
        assert seen == sorted(seen)
        assert len(set(seen)) == len(seen)

    def test_unknown_op_yields_error_and_server_survives(self):
        client = _loopback_client(MockBackend(0))
        with pytest.raises(TransportError, match="unknown op"):
            client._request("bogus_op", {})
        # server must still answer afterwards
        assert client.echo(np.ones(2, dtype=np.float32)).tolist() == [1.0, 1.0]


class TestLoopbackMockService(ServiceContract):
    """The in-process mock server must satisfy the full service contract."""

    @pytest.fixture
    def backend(self):
        client = _loopback_client(MockBackend(42))
        yield client
        client.close()
