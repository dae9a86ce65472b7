"""Trained-model artifact directories.

    <dir>/meta.json          backbone, resolution, preprocessing, class order,
                             titles, init lineage, training config, content hash
    <dir>/weights.pt         state_dict of the ClassifierModel
    <dir>/training_log.csv   per-epoch trace (when produced by training)
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import torch

from gameid.backbones import PREPROCESSING, ClassifierModel, assemble_classifier, get_backbone_spec

ARTIFACT_VERSION = 1
META_FILE = "meta.json"
WEIGHTS_FILE = "weights.pt"


class ArtifactError(RuntimeError):
    code = "artifact-error"


class HashMismatch(ArtifactError):
    code = "hash-mismatch"


def save_artifact(
    model: ClassifierModel,
    directory: str | os.PathLike,
    titles: dict[str, str] | None = None,
    system: str | None = None,
    training_config: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights_path = directory / WEIGHTS_FILE
    state = {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()}
    torch.save(state, weights_path)
    digest = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    model.content_hash = digest
    meta = {
        "version": ARTIFACT_VERSION,
        "system": system,
        "backbone": model.spec.name,
        "input_resolution": model.spec.input_resolution,
        "preprocessing_id": model.spec.preprocessing_id,
        "preprocessing": {k: list(v) for k, v in PREPROCESSING[model.spec.preprocessing_id].items()},
        "num_classes": model.num_classes,
        "dropout_rate": model.head_spec.dropout_rate,
        "class_order": list(model.class_order),
        "titles": {g: (titles or {}).get(g, g) for g in model.class_order},
        "init_mode": model.lineage,
        "training_config": training_config or {},
        "weights_file": WEIGHTS_FILE,
        "content_hash": digest,
    }
    if extra:
        meta.update(extra)
    with open(directory / META_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1, ensure_ascii=False)
        fh.write("\n")
    return directory


def read_meta(directory: str | os.PathLike) -> dict[str, Any]:
    path = Path(directory) / META_FILE
    if not path.exists():
        raise ArtifactError(f"missing {META_FILE} in {directory}")
    meta = json.loads(path.read_text(encoding="utf-8"))
    for key in ("backbone", "class_order", "content_hash", "num_classes"):
        if key not in meta:
            raise ArtifactError(f"{META_FILE} lacks required field {key!r}")
    if meta.get("version") != ARTIFACT_VERSION:
        raise ArtifactError(f"unsupported artifact version {meta.get('version')!r}")
    return meta


def load_model(directory: str | os.PathLike) -> tuple[ClassifierModel, dict[str, Any]]:
    """Rebuild the model from an artifact directory after verifying its hash. Returned in eval mode."""
    directory = Path(directory)
    meta = read_meta(directory)
    weights_path = directory / meta.get("weights_file", WEIGHTS_FILE)
    if not weights_path.exists():
        raise ArtifactError(f"missing weights file {weights_path.name} in {directory}")
    digest = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    if digest != meta["content_hash"]:
        raise HashMismatch(f"weights hash {digest[:12]} does not match meta {meta['content_hash'][:12]}")
    class_order = tuple(meta["class_order"])
    if len(class_order) != meta["num_classes"]:
        raise ArtifactError("class_order length disagrees with num_classes")
    spec = get_backbone_spec(meta["backbone"])
    model = assemble_classifier(spec, len(class_order), "random", class_order=class_order,
                                dropout_rate=meta.get("dropout_rate", 0.2))
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    out_dim = state.get("classifier.weight", torch.empty(0, 0)).shape[0]
    if out_dim != len(class_order):
        raise ArtifactError(f"weights have {out_dim} outputs but class_order has {len(class_order)}")
    model.load_state_dict(state, strict=True)
    model.lineage = meta.get("init_mode", {"mode": "random"})
    model.content_hash = digest
    model.eval()
    return model, meta
