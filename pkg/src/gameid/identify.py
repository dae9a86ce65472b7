"""Classify screenshots against a trained artifact; optional read-only HTTP endpoint."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from email.parser import BytesParser
from email.policy import HTTP
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlsplit

import torch
from PIL import UnidentifiedImageError

from gameid.artifact import ArtifactError, load_model
from gameid.backbones import ClassifierModel, preprocess

log = logging.getLogger(__name__)


class UndecodableImage(ValueError):
    code = "undecodable-image"


@dataclass(frozen=True)
class IdentificationModel:
    model: ClassifierModel
    class_order: tuple[str, ...]
    title_map: dict[str, str]
    preprocessing_id: str
    input_resolution: int
    system: str | None
    backbone: str
    content_hash: str

    def describe(self) -> dict[str, Any]:
        return {"system": self.system, "backbone": self.backbone, "hash": self.content_hash}


@dataclass(frozen=True)
class Prediction:
    ranked: tuple[tuple[str, str, float], ...]  # (game_id, title, probability)
    distribution: tuple[float, ...]  # full softmax over class_order

    def to_json(self, model: IdentificationModel) -> dict[str, Any]:
        return {
            "predictions": [{"game_id": g, "title": t, "probability": p} for g, t, p in self.ranked],
            "model": model.describe(),
        }


def load_artifact(path: str | os.PathLike) -> IdentificationModel:
    """Load an artifact in inference mode after verifying its content hash."""
    path = Path(path)
    if not path.is_dir():
        raise ArtifactError(f"artifact directory {path} does not exist")
    model, meta = load_model(path)
    titles = meta.get("titles") or {}
    title_map = {g: titles.get(g, g) for g in model.class_order}
    return IdentificationModel(
        model=model,
        class_order=model.class_order,
        title_map=title_map,
        preprocessing_id=meta.get("preprocessing_id", model.spec.preprocessing_id),
        input_resolution=int(meta.get("input_resolution", model.spec.input_resolution)),
        system=meta.get("system"),
        backbone=meta["backbone"],
        content_hash=meta["content_hash"],
    )


def identify_screenshot(model: IdentificationModel, image, top_k: int = 5) -> Prediction:
    """Rank the artifact's classes for one image (path, bytes or PIL image)."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    try:
        x = preprocess(image, model.input_resolution, model.preprocessing_id).unsqueeze(0)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise UndecodableImage(f"cannot decode image: {exc}") from exc
    with torch.no_grad():
        probs = model.model(x)[0].double()
    k = min(top_k, len(model.class_order))
    # stable sort: equal probabilities keep class-index order
    order = sorted(range(len(probs)), key=lambda i: (-probs[i].item(), i))[:k]
    ranked = tuple((model.class_order[i], model.title_map[model.class_order[i]], float(probs[i])) for i in order)
    return Prediction(ranked, tuple(float(p) for p in probs))


# --- HTTP ---------------------------------------------------------------------


class ModelHolder:
    """Swap-on-load reference: readers see the old or the new model, never a mix."""

    def __init__(self, model: IdentificationModel):
        self._model = model
        self._lock = threading.Lock()

    def get(self) -> IdentificationModel:
        return self._model

    def swap(self, model: IdentificationModel) -> None:
        with self._lock:
            self._model = model


def _extract_image(content_type: str, body: bytes) -> bytes:
    if content_type.startswith("multipart/form-data"):
        msg = BytesParser(policy=HTTP).parsebytes(b"Content-Type: " + content_type.encode() + b"\r\n\r\n" + body)
        for part in msg.iter_parts():
            if part.get_filename() or part.get_param("name", header="content-disposition") in ("image", "file"):
                return part.get_payload(decode=True) or b""
        raise UndecodableImage("multipart body has no image part")
    return body


def make_handler(holder: ModelHolder, default_top_k: int = 5):
    class Handler(BaseHTTPRequestHandler):
        server_version = "gameid"

        def _send(self, status: int, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:
            if urlsplit(self.path).path == "/healthz":
                self._send(200, {"status": "ok", "model": holder.get().describe()})
            else:
                self._send(404, {"error": "not-found"})

        def do_POST(self) -> None:
            url = urlsplit(self.path)
            if url.path != "/identify":
                self._send(404, {"error": "not-found"})
                return
            try:
                top_k = int(parse_qs(url.query).get("top_k", [default_top_k])[0])
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                image = _extract_image(self.headers.get("Content-Type", ""), body)
                model = holder.get()
                self._send(200, identify_screenshot(model, image, top_k).to_json(model))
            except (ValueError, UndecodableImage) as exc:
                self._send(400, {"error": getattr(exc, "code", "bad-request"), "message": str(exc)})

        def log_message(self, fmt, *args) -> None:
            log.info("%s " + fmt, self.address_string(), *args)

    return Handler


def make_server(model: IdentificationModel, host: str = "127.0.0.1", port: int = 8000,
                default_top_k: int = 5) -> tuple[ThreadingHTTPServer, ModelHolder]:
    holder = ModelHolder(model)
    server = ThreadingHTTPServer((host, port), make_handler(holder, default_top_k))
    return server, holder
