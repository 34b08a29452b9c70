"""Access to the model being explained.

External models speak a line-delimited JSON protocol, over a child
process's stdin/stdout or as HTTP POST bodies::

    -> {"id": 0, "instances": [<payload>, ...]}
    <- {"id": 0, "scores": [0.93, ...]}

Payloads are float arrays (tabular), string arrays (text) or
``{"path": ..., "masked_segments": [...]}`` (images).  Responses come back in
request order, one scalar score per instance.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adapters import AdaptedInstance, apply_mask, wire_payload
from .errors import EvaluationError, ProtocolError, TransportError, ValidationError

log = logging.getLogger(__name__)


# -- builtin reference models -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Linear:
    w: np.ndarray
    b: float = 0.0

    def score(self, X):
        return X @ np.asarray(self.w, dtype=float) + float(self.b)

    def to_dict(self):
        return {"type": "linear", "w": [float(x) for x in self.w], "b": float(self.b)}


@dataclass(frozen=True, eq=False)
class Logistic:
    w: np.ndarray
    b: float = 0.0

    def score(self, X):
        return 1.0 / (1.0 + np.exp(-(X @ np.asarray(self.w, dtype=float) + float(self.b))))

    def to_dict(self):
        return {"type": "logistic", "w": [float(x) for x in self.w], "b": float(self.b)}


@dataclass(frozen=True, eq=False)
class LookupTree:
    """Decision rules as nested ``{"f", "t", "l", "r"}`` / ``{"p"}`` nodes."""

    rules: dict

    def score(self, X):
        out = np.empty(len(X))
        for k, x in enumerate(X):
            node = self.rules
            while "p" not in node:
                node = node["l"] if x[int(node["f"])] <= float(node["t"]) else node["r"]
            out[k] = float(node["p"])
        return out

    def to_dict(self):
        return {"type": "tree", "rules": self.rules}


def builtin_from_dict(data: dict):
    kind = data.get("type")
    if kind == "linear":
        return Linear(np.asarray(data["w"], dtype=float), float(data.get("b", 0.0)))
    if kind == "logistic":
        return Logistic(np.asarray(data["w"], dtype=float), float(data.get("b", 0.0)))
    if kind == "tree":
        return LookupTree(data["rules"])
    raise ValidationError(f"unknown builtin model type {kind!r}")


# -- endpoints ------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelEndpoint:
    kind: str
    command: tuple[str, ...] | None = None
    url: str | None = None
    model: object = None
    timeout: float = 30.0
    batch_size: int = 64
    stateless: bool = False
    retries: int = 2

    def __post_init__(self):
        if self.kind not in ("builtin", "subprocess", "http"):
            raise ValidationError(f"unknown endpoint kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.timeout > 0:
            raise ValidationError("timeout must be positive")
        if self.kind == "builtin" and self.model is None:
            raise ValidationError("builtin endpoint needs a model")
        if self.kind == "subprocess" and not self.command:
            raise ValidationError("subprocess endpoint needs a command")
        if self.kind == "http" and not self.url:
            raise ValidationError("http endpoint needs a url")

    @classmethod
    def builtin(cls, model, **kw):
        return cls("builtin", model=model, **kw)

    @classmethod
    def subprocess(cls, command, **kw):
        if isinstance(command, str):
            command = shlex.split(command)
        return cls("subprocess", command=tuple(command), **kw)

    @classmethod
    def http(cls, url, **kw):
        return cls("http", url=url, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelEndpoint":
        data = dict(data)
        kind = data.pop("kind")
        if kind == "builtin":
            data["model"] = builtin_from_dict(data["model"])
        if kind == "subprocess":
            cmd = data["command"]
            cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
            # "python" in a config means the interpreter running this package
            if cmd and cmd[0] in ("python", "python3"):
                cmd[0] = sys.executable
            data["command"] = tuple(cmd)
        return cls(kind, **data)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "timeout": self.timeout, "batch_size": self.batch_size}
        if self.kind == "builtin":
            out["model"] = self.model.to_dict()
        elif self.kind == "subprocess":
            out["command"] = list(self.command)
        else:
            out["url"] = self.url
        return out


def _parse_response(line: str, req_id: int, expected: int) -> np.ndarray:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError(f"malformed response line: {line.strip()[:200]!r}") from None
    if not isinstance(msg, dict) or "scores" not in msg or "id" not in msg:
        raise ProtocolError(f"response lacks 'id'/'scores': {line.strip()[:200]!r}")
    if msg["id"] != req_id:
        raise ProtocolError(f"response id {msg['id']} does not match request {req_id}: {line.strip()[:200]!r}")
    scores = msg["scores"]
    if not isinstance(scores, list) or len(scores) != expected:
        raise ProtocolError(f"expected {expected} scores: {line.strip()[:200]!r}")
    try:
        arr = np.array(scores, dtype=float)
    except (TypeError, ValueError):
        raise ProtocolError(f"non-numeric scores: {line.strip()[:200]!r}") from None
    return arr


class _StdioClient:
    """A child process answering one request line with one response line."""

    def __init__(self, endpoint: ModelEndpoint):
        self.endpoint = endpoint
        self.proc = None
        self._lines = None

    def _start(self):
        try:
            self.proc = subprocess.Popen(
                list(self.endpoint.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"cannot start model process {self.endpoint.command}: {exc}") from None
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self.proc, self._lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def close(self):
        if self.proc is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
            self.proc = None

    def _kill(self):
        if self.proc is not None:
            self.proc.kill()
            self.proc.wait()
            self.proc = None

    def request(self, req_id: int, payloads: list) -> np.ndarray:
        line = json.dumps({"id": req_id, "instances": payloads}, ensure_ascii=False) + "\n"
        for attempt in range(self.endpoint.retries + 1):
            if self.proc is None:
                self._start()
            try:
                self.proc.stdin.write(line)
                self.proc.stdin.flush()
                reply = self._lines.get(timeout=self.endpoint.timeout)
            except queue.Empty:
                log.warning("model process timed out (attempt %d)", attempt + 1)
                self._kill()
                continue
            except OSError as exc:
                self._kill()
                raise TransportError(f"model process pipe failed: {exc}") from None
            if reply is None:
                self._kill()
                raise TransportError("model process exited before answering")
            return _parse_response(reply, req_id, len(payloads))
        raise TransportError(f"model process timed out {self.endpoint.retries + 1} times")


def _http_request(endpoint: ModelEndpoint, req_id: int, payloads: list) -> np.ndarray:
    body = (json.dumps({"id": req_id, "instances": payloads}, ensure_ascii=False) + "\n").encode()
    for attempt in range(endpoint.retries + 1):
        req = urllib.request.Request(endpoint.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
                text = resp.read().decode("utf-8")
        except TimeoutError:
            log.warning("model endpoint timed out (attempt %d)", attempt + 1)
            continue
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                log.warning("model endpoint timed out (attempt %d)", attempt + 1)
                continue
            raise TransportError(f"cannot reach {endpoint.url}: {exc.reason}") from None
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) != 1:
            raise ProtocolError(f"expected one response line, got {len(lines)}: {text[:200]!r}")
        return _parse_response(lines[0], req_id, len(payloads))
    raise TransportError(f"{endpoint.url} timed out {endpoint.retries + 1} times")


def _chunks(items, size):
    return [items[a:a + size] for a in range(0, len(items), size)]


def score_batch(endpoint: ModelEndpoint, instances) -> np.ndarray:
    """One finite score per instance, in input order."""
    instances = list(instances)
    if not instances:
        raise ValidationError("cannot score an empty batch")
    if endpoint.kind == "builtin":
        try:
            X = np.array([np.asarray(x, dtype=float).ravel() for x in instances])
        except ValueError:
            raise ValidationError("builtin models need numeric inputs of equal length") from None
        scores = np.asarray(endpoint.model.score(X), dtype=float).ravel()
    else:
        chunks = _chunks(instances, endpoint.batch_size)
        if endpoint.kind == "subprocess":
            client = _StdioClient(endpoint)
            try:
                parts = [client.request(i, c) for i, c in enumerate(chunks)]
            finally:
                client.close()
        elif endpoint.stateless and len(chunks) > 1:
            with ThreadPoolExecutor(min(4, len(chunks))) as pool:
                parts = list(pool.map(lambda ic: _http_request(endpoint, *ic), enumerate(chunks)))
        else:
            parts = [_http_request(endpoint, i, c) for i, c in enumerate(chunks)]
        scores = np.concatenate(parts)
    if scores.shape != (len(instances),):
        raise EvaluationError(f"model returned {scores.size} scores for {len(instances)} instances")
    bad = ~np.isfinite(scores)
    if bad.any():
        raise EvaluationError(f"model returned non-finite score for instance {int(np.flatnonzero(bad)[0])}")
    return scores


def mask_and_score(endpoint: ModelEndpoint, instance: AdaptedInstance, masks) -> np.ndarray:
    """Score every masked variant of ``instance``, in mask order."""
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 2 or masks.shape[1] != instance.n:
        raise ValidationError(f"masks of shape {masks.shape} do not fit {instance.n} segments")
    render = apply_mask if endpoint.kind == "builtin" else wire_payload
    return score_batch(endpoint, [render(instance, m) for m in masks])


def serve_stdio(score_fn, stdin=None, stdout=None):
    """Answer protocol requests on stdin with ``score_fn(instances) -> scores``.

    A convenience for wrapping a model as a subprocess endpoint.
    """
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        scores = [float(s) for s in score_fn(req["instances"])]
        stdout.write(json.dumps({"id": req["id"], "scores": scores}) + "\n")
        stdout.flush()
