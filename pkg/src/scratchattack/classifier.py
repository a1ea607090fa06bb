"""Black-box prediction backends and query accounting.

Weight file layout (all little-endian)::

    b"SCR1"
    u32 layer count L
    L x (u32 rows, u32 cols)
    per layer: float32 weights (rows x cols, row-major) then float32 bias (rows)
    u32 CRC32 of every preceding byte

Layer i maps a ``cols``-vector to a ``rows``-vector. ReLU sits between layers
and softmax after the last one. Images are flattened row-major (h, w, c).
"""
from __future__ import annotations

import hashlib
import json
import os
import socket
import struct
import threading
import time
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .imageio import encode_ppm

WEIGHT_MAGIC = b"SCR1"
TOKEN_ENV = "SCRATCH_REMOTE_TOKEN"


class BudgetExhausted(RuntimeError):
    pass


class BackendError(RuntimeError):
    """Transport failure after retries, or a malformed backend response."""


class WeightFileError(ValueError):
    pass


class QueryLedger:
    """Counts classifier queries against a hard budget. Thread-safe."""

    def __init__(self, budget: int):
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self.budget = int(budget)
        self.used = 0
        self._lock = threading.Lock()

    def charge(self) -> None:
        with self._lock:
            if self.used >= self.budget:
                raise BudgetExhausted(f"query budget of {self.budget} exhausted")
            self.used += 1

    @property
    def remaining(self) -> int:
        return self.budget - self.used


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


@dataclass
class BuiltinClassifier:
    """Fully connected ReLU network with a softmax head."""

    weights: list
    biases: list
    labels: list = field(default_factory=list)
    identity: str = "builtin"

    backend = "builtin"

    def __post_init__(self):
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise WeightFileError(f"layer {i}: bias {b.shape} does not match weights {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise WeightFileError(
                    f"layer {i} expects {W.shape[1]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[0]} (shapes {self.weights[i - 1].shape} "
                    f"and {W.shape})")

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[1]

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x, dtype=float).reshape(-1)
        if a.size != self.input_size:
            raise ValueError(f"input has {a.size} values, model expects {self.input_size}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = W @ a + b
            if i < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
        return softmax(a)


def write_weights(path, weights, biases) -> None:
    body = bytearray(WEIGHT_MAGIC)
    body += struct.pack("<I", len(weights))
    for W in weights:
        body += struct.pack("<2I", *np.shape(W))
    for W, b in zip(weights, biases):
        body += np.asarray(W, dtype="<f4").tobytes()
        body += np.asarray(b, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_builtin(path, labels=None) -> BuiltinClassifier:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"{path}: bad magic bytes")
    if len(data) < 12:
        raise WeightFileError(f"{path}: truncated")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise WeightFileError(f"{path}: checksum mismatch")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    off = 8
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<2I", data, off))
        off += 8
    weights, biases = [], []
    for rows, cols in shapes:
        n = rows * cols
        if off + 4 * (n + rows) > len(data) - 4:
            raise WeightFileError(f"{path}: truncated layer data")
        weights.append(np.frombuffer(data, "<f4", n, off).reshape(rows, cols).astype(float))
        off += 4 * n
        biases.append(np.frombuffer(data, "<f4", rows, off).astype(float))
        off += 4 * rows
    if off != len(data) - 4:
        raise WeightFileError(f"{path}: {len(data) - 4 - off} unexpected trailing bytes")
    digest = hashlib.sha256(data).hexdigest()[:16]
    return BuiltinClassifier(weights, biases, list(labels or []), identity=f"builtin:{digest}")


# --------------------------------------------------------------------------
# remote backends

_TRANSIENT = (urllib.error.URLError, ConnectionError, socket.timeout, TimeoutError)


def _post(url: str, body: bytes, content_type: str, token: Optional[str], timeout: float,
          retries: int = 3, backoff: float = 0.2) -> dict:
    headers = {"Content-Type": content_type}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    for attempt in range(retries + 1):
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read()
            break
        except urllib.error.HTTPError as exc:
            raise BackendError(f"{url}: HTTP {exc.code}") from exc
        except _TRANSIENT as exc:
            if attempt == retries:
                raise BackendError(f"{url}: transport failure after {retries} retries: {exc}") from exc
            time.sleep(backoff * 2 ** attempt)
    try:
        return json.loads(raw)
    except ValueError as exc:
        raise BackendError(f"{url}: response is not JSON") from exc


class RemoteClassifier:
    """Classifier behind ``POST {url}/predict``."""

    backend = "remote"

    def __init__(self, url: str, num_classes: Optional[int] = None, token: Optional[str] = None,
                 timeout: float = 30.0, retries: int = 3, backoff: float = 0.2):
        self.url = url.rstrip("/")
        self._k = num_classes
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout, self.retries, self.backoff = timeout, retries, backoff
        self.labels = []
        self.identity = f"remote:{self.url}"

    @property
    def num_classes(self) -> Optional[int]:
        return self._k

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        payload = json.dumps({"shape": list(x.shape), "pixels": x.ravel().tolist()}).encode()
        resp = _post(self.url + "/predict", payload, "application/json", self.token,
                     self.timeout, self.retries, self.backoff)
        probs = resp.get("probs") if isinstance(resp, dict) else None
        if not isinstance(probs, list) or len(probs) < 2:
            raise BackendError("malformed /predict response: missing probs")
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1) > 1e-6:
            raise BackendError("malformed /predict response: not a probability vector")
        if self._k is None:
            self._k = p.size
        elif p.size != self._k:
            raise BackendError(f"expected {self._k} probabilities, got {p.size}")
        return p


class RemoteCaptioner:
    """Caption service behind ``POST {url}/caption``; images go out as PPM bytes."""

    backend = "remote"
    num_classes = None

    def __init__(self, url: str, token: Optional[str] = None, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.2):
        self.url = url.rstrip("/")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout, self.retries, self.backoff = timeout, retries, backoff
        self.identity = f"remote-caption:{self.url}"

    def caption(self, x: np.ndarray):
        resp = _post(self.url + "/caption", encode_ppm(x), "image/x-portable-pixmap", self.token,
                     self.timeout, self.retries, self.backoff)
        return parse_caption_response(resp)


def parse_caption_response(resp) -> tuple:
    if not isinstance(resp, dict):
        raise BackendError("malformed /caption response")
    text = resp.get("caption")
    if text is None:
        return None, None
    conf = resp.get("confidence")
    if not isinstance(text, str) or not isinstance(conf, (int, float)) or isinstance(conf, bool):
        raise BackendError("malformed /caption response")
    if not 0.0 <= conf <= 1.0:
        raise BackendError(f"caption confidence {conf} outside [0, 1]")
    return text, float(conf)


def predict(model, ledger: Optional[QueryLedger], x: np.ndarray) -> np.ndarray:
    """One charged query: the model's full probability vector for ``x``."""
    if ledger is not None:
        ledger.charge()
    return model.probabilities(x)


def caption_predict(model, ledger: Optional[QueryLedger], x: np.ndarray) -> tuple:
    """One charged caption query; returns ``(caption, confidence)``, both possibly None."""
    if ledger is not None:
        ledger.charge()
    return model.caption(x)
