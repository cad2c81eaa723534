"""HTTP server for the adapter wire protocol.

Four JSON-over-POST endpoints: /info, /predict, /gradient, /embed. Unknown
routes get 404, malformed bodies 400 with a diagnostic, unsupported
capabilities 501. Responses are pure functions of request bodies.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .bindings import AdapterBinding


class BadRequest(ValueError):
    pass


def _require(payload: dict, key: str):
    if key not in payload:
        raise BadRequest(f"missing field {key!r}")
    return payload[key]


def _as_image(flat, shape, declared) -> np.ndarray:
    shape = tuple(int(d) for d in shape)
    if tuple(declared) != shape:
        raise BadRequest(f"shape {list(shape)} does not match binding {list(declared)}")
    arr = np.asarray(flat, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise BadRequest(f"expected {int(np.prod(shape))} values, got {arr.size}")
    return arr.reshape(shape)


def handle_request(binding: AdapterBinding, path: str, payload: dict):
    """Pure request dispatcher; returns (status, response dict)."""
    try:
        if path == "/info":
            return 200, binding.info()
        if path == "/predict":
            images = _require(payload, "images")
            shape = _require(payload, "shape")
            batch = np.stack(
                [_as_image(flat, shape, binding.input_shape) for flat in images]
            )
            scores = binding.predict(batch)
            return 200, {"scores": [row.tolist() for row in scores]}
        if path == "/gradient":
            if binding.gradient is None:
                return 501, {"error": "gradient unsupported"}
            image = _as_image(
                _require(payload, "image"), _require(payload, "shape"),
                binding.input_shape,
            )
            class_index = int(_require(payload, "class_index"))
            if not 0 <= class_index < len(binding.class_names):
                raise BadRequest(f"class_index {class_index} out of range")
            grad = np.asarray(binding.gradient(image, class_index), dtype=np.float64)
            return 200, {"gradient": grad.ravel().tolist()}
        if path == "/embed":
            if binding.embedder is None:
                return 501, {"error": "embed unsupported"}
            patches = []
            for spec in _require(payload, "patches"):
                shape = tuple(int(d) for d in _require(spec, "shape"))
                arr = np.asarray(_require(spec, "data"), dtype=np.float64)
                if arr.size != int(np.prod(shape)):
                    raise BadRequest("patch data does not match its shape")
                patches.append(arr.reshape(shape))
            vectors = binding.embedder(patches)
            dims = {len(np.ravel(v)) for v in vectors}
            if len(vectors) != len(patches) or len(dims) > 1:
                raise BadRequest("embedder returned inconsistent vectors")
            return 200, {"embeddings": [np.ravel(v).tolist() for v in vectors]}
        return 404, {"error": f"no such route {path}"}
    except BadRequest as exc:
        return 400, {"error": str(exc)}
    except (TypeError, ValueError, KeyError) as exc:
        return 400, {"error": f"malformed request: {exc}"}


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            payload = json.loads(raw or b"{}")
            if not isinstance(payload, dict):
                raise json.JSONDecodeError("expected object", "", 0)
        except json.JSONDecodeError:
            self._reply(400, {"error": "request body is not a JSON object"})
            return
        status, response = handle_request(self.server.binding, self.path, payload)
        self._reply(status, response)

    def do_GET(self):
        self._reply(404, {"error": "POST only"})

    def _reply(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class AdapterServer:
    """Running server handle: address, background thread, clean shutdown."""

    def __init__(self, binding: AdapterBinding, port: int = 0, host: str = "127.0.0.1"):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.binding = binding
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "AdapterServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()


def serve(binding: AdapterBinding, port: int = 0, host: str = "127.0.0.1") -> AdapterServer:
    """Start serving the binding in a background thread; returns the handle."""
    return AdapterServer(binding, port, host).start()
