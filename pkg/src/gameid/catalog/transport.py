"""HTTP transports: a live one backed by requests and a replaying one for tests."""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import parse_qsl, urlencode, urlsplit

import requests

# Query parameters that never take part in fixture keys.
SECRET_PARAMS = frozenset({"api_key"})


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes
    headers: dict[str, str] = field(default_factory=dict)

    def json(self):
        return json.loads(self.body.decode("utf-8"))


class Transport(Protocol):
    def get(self, url: str, params: dict[str, str] | None = None) -> Response: ...


def canonical_key(url: str, params: dict[str, str] | None = None) -> str:
    """Host-independent request key: path plus sorted, non-secret query params."""
    parts = urlsplit(url)
    query = [(k, v) for k, v in parse_qsl(parts.query) if k not in SECRET_PARAMS]
    query += [(k, str(v)) for k, v in (params or {}).items() if k not in SECRET_PARAMS]
    path = parts.path or "/"
    return path + ("?" + urlencode(sorted(query)) if query else "")


class HttpTransport:
    def __init__(self, timeout: float = 30.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", "gameid/0.1")

    def get(self, url: str, params: dict[str, str] | None = None) -> Response:
        try:
            r = self.session.get(url, params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            return Response(599, str(exc).encode())
        return Response(r.status_code, r.content, dict(r.headers))


class FixtureTransport:
    """Replays recorded request/response pairs from a fixture directory.

    The directory holds ``*.jsonl`` bundles (one pair per line) and/or
    ``*.json`` files (one pair each). A pair is::

        {"key": "/games?limit=100&offset=0&platform=28",
         "responses": [{"status": 429}, {"status": 200, "json": {...}}]}

    Responses are served in order and the last one repeats. Bodies are given
    as ``json``, ``text``, ``body_b64`` or ``body_file`` (relative to the
    fixture directory). Unknown keys answer 404.
    """

    def __init__(self, root: str | Path, clock: Callable[[], float] = time.monotonic):
        self.root = Path(root)
        self.clock = clock
        self._pairs: dict[str, list[dict]] = {}
        self._served: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[tuple[float, str]] = []
        if not self.root.is_dir():
            raise FileNotFoundError(f"fixture directory not found: {self.root}")
        for path in sorted(self.root.glob("*.jsonl")):
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._add(json.loads(line))
        for path in sorted(self.root.glob("*.json")):
            self._add(json.loads(path.read_text(encoding="utf-8")))

    def _add(self, pair: dict) -> None:
        self._pairs[pair["key"]] = pair["responses"]

    def keys(self) -> list[str]:
        return sorted(self._pairs)

    def get(self, url: str, params: dict[str, str] | None = None) -> Response:
        key = canonical_key(url, params)
        with self._lock:
            self.calls.append((self.clock(), key))
            responses = self._pairs.get(key)
            if responses is None:
                return Response(404, b"")
            i = self._served.get(key, 0)
            self._served[key] = i + 1
            spec = responses[min(i, len(responses) - 1)]
        return Response(spec.get("status", 200), self._body(spec), spec.get("headers", {}))

    def _body(self, spec: dict) -> bytes:
        if "json" in spec:
            return json.dumps(spec["json"]).encode("utf-8")
        if "text" in spec:
            return spec["text"].encode("utf-8")
        if "body_b64" in spec:
            return base64.b64decode(spec["body_b64"])
        if "body_file" in spec:
            return (self.root / spec["body_file"]).read_bytes()
        return b""

    def count(self, prefix: str = "") -> int:
        return sum(1 for _, k in self.calls if k.startswith(prefix))
