"""Classification oracles behind a hard black-box boundary.

Every probe of a model goes through query_full / query_topk / classify,
which charge a QueryLedger before returning anything. Local models are
small random networks in a flat binary format, good enough to exercise
the attack loops end to end without a training pipeline. The remote
client speaks a deliberately dumb JSON-over-HTTP protocol and exposes
only ranked top-k output, like the commercial APIs it stands in for.
"""

from __future__ import annotations

import base64
import json
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .core import as_image, ppm_bytes

MODEL_MAGIC = b"RNAM"
_MODEL_HEADER = struct.Struct("<4sBIIIIIi")  # magic, kind, layers, H, W, C, classes, non_object
_LAYER_HEADER = struct.Struct("<II")  # out, in

KIND_LINEAR = 0
KIND_MLP = 1

_BACKOFF_BASE_S = 0.05
_BACKOFF_CAP_S = 2.0
_TIMEOUT_S = 10.0


class BudgetExceededError(RuntimeError):
    """Raised by QueryLedger.charge when the hard query cap is hit."""


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or truncated."""


class TransportError(RuntimeError):
    """Endpoint unreachable or persistently failing; carries attempt count."""

    def __init__(self, message, attempts):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ResponseParseError(RuntimeError):
    """Response body did not match the configured paths; carries a sample."""

    def __init__(self, message, sample):
        sample = sample if len(sample) <= 200 else sample[:200] + "..."
        super().__init__(f"{message}; response sample: {sample!r}")
        self.sample = sample


class QueryLedger:
    """Thread-safe query counter with optional hard budget.

    Every oracle call charges exactly one unit under a named phase
    ("gradient", "check", "size_select", ...). With a budget set, a charge
    that would pass the cap raises BudgetExceededError and is not counted.
    """

    def __init__(self, budget=None):
        if budget is not None and budget < 1:
            raise ValueError(f"budget must be positive, got {budget}")
        self.budget = budget
        self._lock = threading.Lock()
        self._total = 0
        self._phases = {}

    @property
    def total(self):
        with self._lock:
            return self._total

    @property
    def remaining(self):
        with self._lock:
            return None if self.budget is None else self.budget - self._total

    def charge(self, phase="query"):
        with self._lock:
            if self.budget is not None and self._total + 1 > self.budget:
                raise BudgetExceededError(
                    f"query budget {self.budget} exhausted (phase {phase!r})"
                )
            self._total += 1
            self._phases[phase] = self._phases.get(phase, 0) + 1
            return self._total

    def snapshot(self):
        with self._lock:
            return dict(self._phases)


@dataclass(frozen=True)
class TopKList:
    """Ranked (label, score) prefix of a distribution, rank 1 first.

    Scores are non-increasing with ties broken by label order on the
    producer side; labels absent from the list score 0.0 and have no
    rank. k is the requested length; an oracle may return fewer entries
    than k but never more.
    """

    entries: tuple
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if len(self.entries) > self.k:
            raise ValueError(f"got {len(self.entries)} entries for k={self.k}")
        scores = [s for _, s in self.entries]
        if any(not (0.0 < s <= 1.0) for s in scores):
            raise ValueError(f"top-k scores must lie in (0, 1], got {scores}")
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError("top-k scores must be non-increasing")

    def score(self, label):
        for lab, s in self.entries:
            if lab == label:
                return float(s)
        return 0.0

    def rank(self, label):
        """1-based position of label, or None when outside the list."""
        for i, (lab, _) in enumerate(self.entries):
            if lab == label:
                return i + 1
        return None

    def labels(self):
        return [lab for lab, _ in self.entries]


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


class LinearSoftmaxModel:
    """Single affine layer with softmax output."""

    kind = "linear"
    supports_full = True
    supports_topk = True

    def __init__(self, weights, bias, input_dims, non_object=None):
        self.weights = np.asarray(weights, dtype=np.float32)
        self.bias = np.asarray(bias, dtype=np.float32)
        self.input_dims = tuple(int(d) for d in input_dims)
        self.non_object = non_object
        d = int(np.prod(self.input_dims))
        if self.weights.ndim != 2 or self.weights.shape[1] != d:
            raise ValueError(
                f"weight shape {self.weights.shape} does not match input dims {self.input_dims}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} classes"
            )

    @property
    def classes(self):
        return self.weights.shape[0]

    def predict(self, x):
        x = as_image(x)
        if x.shape != self.input_dims:
            raise ValueError(f"input shape {x.shape} does not match model dims {self.input_dims}")
        z = self.weights.astype(np.float64) @ x.ravel() + self.bias.astype(np.float64)
        return softmax(z)


class MLPModel:
    """Dense ReLU network with softmax output; layers is [(W, b), ...]."""

    kind = "mlp"
    supports_full = True
    supports_topk = True

    def __init__(self, layers, input_dims, non_object=None):
        if not layers:
            raise ValueError("need at least one layer")
        self.layers = [
            (np.asarray(w, dtype=np.float32), np.asarray(b, dtype=np.float32))
            for w, b in layers
        ]
        self.input_dims = tuple(int(d) for d in input_dims)
        self.non_object = non_object
        fan = int(np.prod(self.input_dims))
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or w.shape[1] != fan:
                raise ValueError(f"layer {i} weight shape {w.shape} does not chain from {fan}")
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} bias shape {b.shape} mismatches {w.shape[0]}")
            fan = w.shape[0]

    @property
    def classes(self):
        return self.layers[-1][0].shape[0]

    def predict(self, x):
        x = as_image(x)
        if x.shape != self.input_dims:
            raise ValueError(f"input shape {x.shape} does not match model dims {self.input_dims}")
        a = x.ravel()
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            a = w.astype(np.float64) @ a + b.astype(np.float64)
            if i != last:
                a = np.maximum(a, 0.0)
        return softmax(a)


def query_full(model, x, ledger, phase="query"):
    """Charge one query and return the model's full probability vector."""
    ledger.charge(phase)
    return model.predict(x)


def query_topk(model, x, k, ledger, phase="query"):
    """Charge one query and return the ranked top-k prefix.

    Local models compute the full vector and truncate; ties break toward
    the smaller class id so the ordering is deterministic. Remote handles
    do their own fetching and accounting.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if hasattr(model, "fetch_topk"):
        return model.fetch_topk(x, k, ledger, phase)
    if k > model.classes:
        raise ValueError(f"k={k} exceeds the model's {model.classes} classes")
    p = query_full(model, x, ledger, phase)
    order = sorted(range(len(p)), key=lambda i: (-p[i], i))[:k]
    return TopKList(entries=tuple((i, float(p[i])) for i in order), k=k)


def classify(model, x, ledger, phase="query"):
    """Charge one query and return the argmax label (ties to smaller id)."""
    p = query_full(model, x, ledger, phase)
    return int(np.argmax(p))


@dataclass(frozen=True)
class ModelSpec:
    """Recipe for a randomly generated local model.

    pool_period > 0 ties first-layer weights across pool_period-spaced
    translations (a crude stand-in for the shift tolerance of pooled conv
    features, which is what region tiling exploits). non_object marks a
    designated background class whose logit gets a constant boost so it
    dominates featureless inputs.
    """

    kind: str
    height: int
    width: int
    channels: int
    classes: int
    hidden: tuple = ()
    weight_scale: float = 1.0
    pool_period: int = 0
    non_object: int = -1
    non_object_bias: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if min(self.height, self.width, self.channels) < 1 or self.classes < 2:
            raise ValueError("model dims must be positive with at least 2 classes")
        if self.kind == "mlp" and not self.hidden:
            raise ValueError("mlp needs at least one hidden width")
        if self.kind == "linear" and self.hidden:
            raise ValueError("linear model takes no hidden widths")
        if self.pool_period < 0:
            raise ValueError("pool_period must be >= 0")
        if self.pool_period:
            if self.kind != "mlp":
                raise ValueError("pooling applies to mlp models only")
            if self.height % self.pool_period or self.width % self.pool_period:
                raise ValueError("pool_period must divide both spatial dims")
        if not (-1 <= self.non_object < self.classes):
            raise ValueError(f"non_object {self.non_object} out of range")


def generate_local_model(spec, seed, path=None):
    """Build a random model from a ModelSpec, optionally saving it.

    Weights are He-scaled normals (times spec.weight_scale) drawn from a
    Philox stream, cast to float32 so generate -> save -> load round-trips
    bitwise. No training happens; see fit_linear_model for the
    least-squares alternative.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    h, w, c = spec.height, spec.width, spec.channels
    d = h * w * c
    non_object = None if spec.non_object < 0 else spec.non_object

    if spec.kind == "linear":
        weights = rng.normal(size=(spec.classes, d)) * (spec.weight_scale / np.sqrt(d))
        bias = np.zeros(spec.classes)
        if non_object is not None:
            bias[non_object] = spec.non_object_bias
        model = LinearSoftmaxModel(
            weights.astype(np.float32), bias.astype(np.float32), (h, w, c), non_object
        )
    else:
        layers = []
        first = spec.hidden[0]
        if spec.pool_period:
            p = spec.pool_period
            base = rng.normal(size=(first, p, p, c)) * np.sqrt(2.0 / (p * p * c))
            w1 = np.empty((first, h, w, c))
            for r in range(h):
                for col in range(w):
                    w1[:, r, col, :] = base[:, r % p, col % p, :]
            # average over tiles so activations stay O(1) regardless of canvas size
            w1 = w1.reshape(first, d) * (spec.weight_scale / ((h // p) * (w // p)))
        else:
            w1 = rng.normal(size=(first, d)) * (spec.weight_scale * np.sqrt(2.0 / d))
        layers.append((w1.astype(np.float32), np.zeros(first, dtype=np.float32)))
        fan = first
        for width_ in spec.hidden[1:]:
            wk = rng.normal(size=(width_, fan)) * (spec.weight_scale * np.sqrt(2.0 / fan))
            layers.append((wk.astype(np.float32), np.zeros(width_, dtype=np.float32)))
            fan = width_
        wlast = rng.normal(size=(spec.classes, fan)) * (spec.weight_scale * np.sqrt(2.0 / fan))
        blast = np.zeros(spec.classes)
        if non_object is not None:
            blast[non_object] = spec.non_object_bias
        layers.append((wlast.astype(np.float32), blast.astype(np.float32)))
        model = MLPModel(layers, (h, w, c), non_object)

    if path is not None:
        save_model(path, model)
    return model


def fit_linear_model(inputs, labels, classes, non_object=None, ridge=1e-6):
    """Least-squares fit of a linear softmax model to one-hot targets.

    inputs is (N, H, W, C); a small ridge keeps the normal equations
    solvable when N < D. Useful for planting a known decision rule.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 4:
        raise ValueError(f"inputs must be (N, H, W, C), got {inputs.shape}")
    n = inputs.shape[0]
    flat = inputs.reshape(n, -1)
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), np.asarray(labels, dtype=int)] = 1.0
    gram = flat.T @ flat + ridge * np.eye(flat.shape[1])
    weights = np.linalg.solve(gram, flat.T @ onehot).T
    return LinearSoftmaxModel(
        weights.astype(np.float32),
        np.zeros(classes, dtype=np.float32),
        inputs.shape[1:],
        non_object,
    )


def save_model(path, model):
    """Write a local model to the flat little-endian binary format."""
    if model.kind == "linear":
        kind = KIND_LINEAR
        layers = [(model.weights, model.bias)]
    elif model.kind == "mlp":
        kind = KIND_MLP
        layers = model.layers
    else:
        raise ValueError(f"cannot serialize model kind {model.kind!r}")
    h, w, c = model.input_dims
    non_object = -1 if model.non_object is None else int(model.non_object)
    with open(path, "wb") as f:
        f.write(
            _MODEL_HEADER.pack(MODEL_MAGIC, kind, len(layers), h, w, c, model.classes, non_object)
        )
        for wmat, bvec in layers:
            f.write(_LAYER_HEADER.pack(wmat.shape[0], wmat.shape[1]))
            f.write(wmat.astype("<f4").tobytes())
            f.write(bvec.astype("<f4").tobytes())


def load_model(path):
    """Read a model file back, validating structure as it goes."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _MODEL_HEADER.size:
        raise ModelFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, kind, n_layers, h, w, c, classes, non_object = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if kind not in (KIND_LINEAR, KIND_MLP):
        raise ModelFormatError(f"{path}: unknown model kind byte {kind}")
    if min(h, w, c) < 1 or classes < 2 or n_layers < 1:
        raise ModelFormatError(f"{path}: bad header fields")
    if kind == KIND_LINEAR and n_layers != 1:
        raise ModelFormatError(f"{path}: linear model must have exactly 1 layer, got {n_layers}")

    off = _MODEL_HEADER.size
    layers = []
    fan = h * w * c
    for i in range(n_layers):
        if off + _LAYER_HEADER.size > len(raw):
            raise ModelFormatError(f"{path}: truncated at layer {i} header")
        out_dim, in_dim = _LAYER_HEADER.unpack_from(raw, off)
        off += _LAYER_HEADER.size
        if in_dim != fan:
            raise ModelFormatError(
                f"{path}: layer {i} expects {in_dim} inputs, upstream provides {fan}"
            )
        need = (out_dim * in_dim + out_dim) * 4
        if off + need > len(raw):
            raise ModelFormatError(f"{path}: truncated in layer {i} weights")
        wmat = np.frombuffer(raw, dtype="<f4", count=out_dim * in_dim, offset=off)
        wmat = wmat.reshape(out_dim, in_dim)
        off += out_dim * in_dim * 4
        bvec = np.frombuffer(raw, dtype="<f4", count=out_dim, offset=off)
        off += out_dim * 4
        layers.append((wmat.copy(), bvec.copy()))
        fan = out_dim
    if fan != classes:
        raise ModelFormatError(f"{path}: last layer width {fan} != {classes} classes")
    if off != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - off} trailing bytes")

    nobj = None if non_object < 0 else non_object
    if nobj is not None and nobj >= classes:
        raise ModelFormatError(f"{path}: non_object {nobj} out of range")
    if kind == KIND_LINEAR:
        wmat, bvec = layers[0]
        return LinearSoftmaxModel(wmat, bvec, (h, w, c), nobj)
    return MLPModel(layers, (h, w, c), nobj)


@dataclass(frozen=True)
class RemoteEndpointConfig:
    """Where and how to query a remote classifier.

    auth_header is a single "Header-Name: value" string or None; an auth
    token override (e.g. from the environment) replaces the value part.
    label_path / score_path are dot-paths into the response JSON, with
    integer segments indexing into arrays.
    """

    url: str
    label_path: str
    score_path: str
    auth_header: str | None = None
    image_field: str = "image"
    max_retries: int = 3
    min_interval_ms: int = 0

    def __post_init__(self):
        if not self.url:
            raise ValueError("endpoint url must be non-empty")
        if not self.label_path or not self.score_path:
            raise ValueError("label_path and score_path must be non-empty")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.min_interval_ms < 0:
            raise ValueError("min_interval_ms must be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown endpoint config keys: {sorted(extra)}")
        missing = {"url", "label_path", "score_path"} - set(d)
        if missing:
            raise ValueError(f"endpoint config missing keys: {sorted(missing)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _walk_path(obj, path):
    cur = obj
    for seg in path.split("."):
        if isinstance(cur, list):
            try:
                cur = cur[int(seg)]
            except (ValueError, IndexError):
                raise KeyError(seg)
        elif isinstance(cur, dict):
            if seg not in cur:
                raise KeyError(seg)
            cur = cur[seg]
        else:
            raise KeyError(seg)
    return cur


class RemoteTopKModel:
    """Oracle handle for a remote endpoint; plugs into query_topk.

    The image crosses the wire as base64 PPM bytes in a JSON POST body.
    Scores come back as raw fitness values and are never renormalized.
    Only ranked top-k output is available, so supports_full is False and
    full-information features must be rejected up front by callers.
    """

    kind = "remote"
    supports_full = False
    supports_topk = True
    non_object = None

    def __init__(self, config, auth_token=None, session=None):
        self.config = config
        self._headers = {}
        if config.auth_header:
            name, _, value = config.auth_header.partition(":")
            if not name.strip() or not value.strip():
                raise ValueError(
                    f"auth_header must look like 'Name: value', got {config.auth_header!r}"
                )
            self._headers[name.strip()] = auth_token if auth_token else value.strip()
        elif auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"
        self._session = session or requests.Session()
        self._last_request = None

    def _pace(self):
        if self.config.min_interval_ms <= 0 or self._last_request is None:
            return
        wait = self.config.min_interval_ms / 1000.0 - (time.monotonic() - self._last_request)
        if wait > 0:
            time.sleep(wait)

    def _parse(self, text):
        try:
            body = json.loads(text)
        except json.JSONDecodeError as e:
            raise ResponseParseError(f"response is not JSON ({e.msg})", text)
        try:
            labels = _walk_path(body, self.config.label_path)
            scores = _walk_path(body, self.config.score_path)
        except KeyError as e:
            raise ResponseParseError(f"path segment {e.args[0]!r} missing from response", text)
        if not isinstance(labels, list) or not isinstance(scores, list):
            raise ResponseParseError("label/score paths must point at arrays", text)
        if len(labels) != len(scores):
            raise ResponseParseError(f"{len(labels)} labels vs {len(scores)} scores", text)
        try:
            entries = tuple((lab, float(s)) for lab, s in zip(labels, scores))
        except (TypeError, ValueError):
            raise ResponseParseError("scores must be numeric", text)
        return entries

    def fetch_topk(self, x, k, ledger, phase="query"):
        """POST the image, parse the ranked response into a TopKList.

        Connection-level failures are retried with exponential backoff and
        charge nothing (the request never reached the server). HTTP 5xx
        responses charge one query each and are retried; any other
        non-200 status charges and fails immediately.
        """
        payload = {self.config.image_field: base64.b64encode(ppm_bytes(x)).decode("ascii")}
        attempts = 0
        delay = _BACKOFF_BASE_S
        while True:
            attempts += 1
            self._pace()
            self._last_request = time.monotonic()
            try:
                resp = self._session.post(
                    self.config.url, json=payload, headers=self._headers, timeout=_TIMEOUT_S
                )
            except (requests.ConnectionError, requests.Timeout) as e:
                if attempts > self.config.max_retries:
                    raise TransportError(f"cannot reach {self.config.url}: {e}", attempts)
                time.sleep(delay)
                delay = min(delay * 2.0, _BACKOFF_CAP_S)
                continue
            ledger.charge(phase)
            if 500 <= resp.status_code < 600:
                if attempts > self.config.max_retries:
                    raise TransportError(
                        f"{self.config.url} kept failing with HTTP {resp.status_code}", attempts
                    )
                time.sleep(delay)
                delay = min(delay * 2.0, _BACKOFF_CAP_S)
                continue
            if resp.status_code != 200:
                raise TransportError(
                    f"{self.config.url} answered HTTP {resp.status_code}", attempts
                )
            entries = self._parse(resp.text)
            return TopKList(entries=entries[:k], k=k)
