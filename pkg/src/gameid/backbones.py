"""Backbone registry and the pooling/dropout/softmax classification head.

Backbones are consumed as pre-built components (torchvision, plus timm for
MobileNet v1 which torchvision does not ship). Each registry entry records
the input resolution, the shape of the last feature map before
classification, and the parameter count of the reference ImageNet model.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

# Per-family normalization constants, applied after scaling pixels to [0, 1].
PREPROCESSING: dict[str, dict[str, tuple[float, float, float]]] = {
    "imagenet": {"mean": (0.485, 0.456, 0.406), "std": (0.229, 0.224, 0.225)},
}


class UnknownArchitecture(KeyError):
    code = "unknown-architecture"


class BackboneMismatch(ValueError):
    code = "backbone-mismatch"


class MissingPretrainedWeights(RuntimeError):
    code = "missing-pretrained-weights"


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_resolution: int
    feature_shape: tuple[int, ...]
    param_count_m: float
    preprocessing_id: str
    pooled: bool
    source: str  # "torchvision" or "timm"
    builder: str
    builder_kwargs: dict[str, Any] = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self) -> None:
        if self.pooled != (len(self.feature_shape) == 3):
            raise ValueError(f"{self.name}: pooled must be true exactly for 3-D feature maps")
        if self.preprocessing_id not in PREPROCESSING:
            raise ValueError(f"{self.name}: unknown preprocessing {self.preprocessing_id!r}")

    @property
    def feature_dim(self) -> int:
        return self.feature_shape[-1]


def _spec(name, res, shape, params, builder, source="torchvision", **kw) -> BackboneSpec:
    return BackboneSpec(name, res, tuple(shape), params, "imagenet", len(shape) == 3, source, builder, kw)


# Order matches the published architecture table and drives report columns.
REGISTRY: dict[str, BackboneSpec] = {
    s.name: s
    for s in [
        _spec("VGG16", 224, (7, 7, 512), 138.4, "vgg16"),
        _spec("ResNet50", 224, (7, 7, 2048), 25.6, "resnet50"),
        _spec("ResNet152", 224, (7, 7, 2048), 60.4, "resnet152"),
        _spec("MobileNet", 224, (7, 7, 1024), 4.3, "mobilenetv1_100", source="timm"),
        _spec("DenseNet169", 224, (7, 7, 1664), 14.3, "densenet169"),
        _spec("DenseNet201", 224, (7, 7, 1920), 20.2, "densenet201"),
        _spec("EfficientNetB0", 224, (7, 7, 1280), 5.3, "efficientnet_b0"),
        _spec("EfficientNetB2", 260, (9, 9, 1408), 9.2, "efficientnet_b2"),
        _spec("EfficientNetB3", 300, (10, 10, 1536), 12.3, "efficientnet_b3"),
        _spec("EfficientNetV2S", 384, (12, 12, 1280), 21.6, "efficientnet_v2_s"),
        _spec("ViT-B16", 224, (768,), 8.66, "vit_b_16"),
        _spec("ViT-L32", 384, (1024,), 306.5, "vit_l_32", image_size=384),
        _spec("SwinT", 224, (7, 7, 768), 28.3, "swin_t"),
    ]
}
ARCHITECTURES: tuple[str, ...] = tuple(REGISTRY)


def get_backbone_spec(name: str) -> BackboneSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownArchitecture(f"unknown architecture {name!r}; known: {', '.join(ARCHITECTURES)}") from None


def smallest_backbone() -> BackboneSpec:
    return min(REGISTRY.values(), key=lambda s: s.param_count_m)


# --- building ----------------------------------------------------------------


def _build_full(spec: BackboneSpec) -> nn.Module:
    """The reference ImageNet classifier for ``spec``, randomly initialized."""
    if spec.source == "timm":
        import timm

        return timm.create_model(spec.builder, pretrained=False, **spec.builder_kwargs)
    import torchvision.models as tvm

    return tvm.get_model(spec.builder, weights=None, **spec.builder_kwargs)


def reference_param_count(spec: BackboneSpec) -> float:
    """Parameter count (millions) of the full reference model, built without allocating."""
    with torch.device("meta"):
        model = _build_full(spec)
    return sum(p.numel() for p in model.parameters()) / 1e6


def probe_feature_shape(spec: BackboneSpec) -> tuple[int, ...]:
    """Shape of the backbone output for one input image, as (w, y, z) or (d,).

    Runs on the meta device, so no memory is allocated and no weights are needed.
    """
    with torch.device("meta"):
        backbone = _feature_extractor(spec, _build_full(spec)).eval()
        out = backbone(torch.empty(1, 3, spec.input_resolution, spec.input_resolution))
    shape = tuple(out.shape[1:])
    return (shape[1], shape[2], shape[0]) if len(shape) == 3 else shape


class _ViTTokens(nn.Module):
    """torchvision ViT up to the final layer norm; returns the class token."""

    def __init__(self, vit: nn.Module):
        super().__init__()
        self.vit = vit
        self.vit.heads = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.vit._process_input(x)
        cls = self.vit.class_token.expand(x.shape[0], -1, -1)
        x = self.vit.encoder(torch.cat([cls, x], dim=1))
        return x[:, 0]


class _NHWCToNCHW(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.permute(0, 3, 1, 2)


def _feature_extractor(spec: BackboneSpec, full: nn.Module) -> nn.Module:
    """Strip the ImageNet classifier, keeping the last layer before classification."""
    b = spec.builder
    if spec.source == "timm":
        full.reset_classifier(0, "")
        return full
    if b.startswith("vgg"):
        return full.features
    if b.startswith("resnet"):
        return nn.Sequential(*list(full.children())[:-2])
    if b.startswith("densenet"):
        return nn.Sequential(full.features, nn.ReLU())
    if b.startswith("efficientnet"):
        return full.features
    if b.startswith("swin"):
        return nn.Sequential(full.features, full.norm, _NHWCToNCHW())
    if b.startswith("vit"):
        return _ViTTokens(full)
    raise UnknownArchitecture(spec.name)


def _pretrained_state_dict(spec: BackboneSpec) -> dict[str, torch.Tensor]:
    """ImageNet weights from a local directory or the torch hub cache.

    Lookup order: ``$GAMEID_PRETRAINED_DIR/<name>.pth``, then the cached
    torchvision/timm checkpoint. Downloading is attempted only when
    ``GAMEID_ALLOW_DOWNLOAD=1``.
    """
    local_dir = os.environ.get("GAMEID_PRETRAINED_DIR")
    if local_dir:
        path = Path(local_dir) / f"{spec.name}.pth"
        if path.exists():
            return torch.load(path, map_location="cpu", weights_only=True)
    allow = os.environ.get("GAMEID_ALLOW_DOWNLOAD") == "1"
    if spec.source == "timm":
        if not allow:
            raise MissingPretrainedWeights(f"no local ImageNet weights for {spec.name}")
        import timm

        return timm.create_model(spec.builder, pretrained=True).state_dict()
    import torchvision.models as tvm

    weights = tvm.get_model_weights(spec.builder).DEFAULT
    cached = Path(torch.hub.get_dir()) / "checkpoints" / os.path.basename(weights.url)
    if not cached.exists() and not allow:
        raise MissingPretrainedWeights(
            f"no cached ImageNet weights for {spec.name} (expected {cached}); "
            "set GAMEID_PRETRAINED_DIR or GAMEID_ALLOW_DOWNLOAD=1"
        )
    try:
        state = weights.get_state_dict(progress=False)
    except Exception as exc:  # network or hash failure
        raise MissingPretrainedWeights(f"could not obtain ImageNet weights for {spec.name}: {exc}") from exc
    if spec.builder.startswith("vit") and "image_size" in spec.builder_kwargs:
        from torchvision.models.vision_transformer import interpolate_embeddings

        patch = int(spec.builder.rsplit("_", 1)[-1])
        state = interpolate_embeddings(spec.builder_kwargs["image_size"], patch, state)
    return state


def build_backbone(spec: BackboneSpec, pretrained: bool = False, seed: int = 0) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        full = _build_full(spec)
    if pretrained:
        full.load_state_dict(_pretrained_state_dict(spec))
    return _feature_extractor(spec, full)


# --- classifier ----------------------------------------------------------------


@dataclass(frozen=True)
class HeadSpec:
    num_classes: int
    dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")


class ClassifierModel(nn.Module):
    """backbone -> global average pooling (pooled backbones only) -> dropout -> softmax.

    ``forward`` returns class probabilities; ``logits`` is what training
    differentiates through.
    """

    def __init__(
        self,
        spec: BackboneSpec,
        backbone: nn.Module,
        head: HeadSpec,
        class_order: tuple[str, ...],
        lineage: dict[str, Any] | None = None,
        head_seed: int = 0,
    ):
        super().__init__()
        if len(class_order) != head.num_classes:
            raise ValueError(f"class_order has {len(class_order)} entries, head has {head.num_classes} outputs")
        self.spec = spec
        self.head_spec = head
        self.class_order = tuple(class_order)
        self.lineage = dict(lineage or {"mode": "random"})
        self.backbone = backbone
        self.pool = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten()) if spec.pooled else nn.Identity()
        self.dropout = nn.Dropout(head.dropout_rate)
        self.classifier = nn.Linear(spec.feature_dim, head.num_classes)
        self.reset_head(head_seed)

    @property
    def num_classes(self) -> int:
        return self.head_spec.num_classes

    def reset_head(self, seed: int = 0) -> None:
        """Glorot-uniform weights, zero bias."""
        gen = torch.Generator(device="cpu").manual_seed(seed)
        w = self.classifier.weight
        bound = float(np.sqrt(6.0 / (w.shape[0] + w.shape[1])))
        with torch.no_grad():
            if w.device.type == "meta":
                return
            w.copy_(torch.rand(w.shape, generator=gen) * 2 * bound - bound)
            self.classifier.bias.zero_()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.dropout(self.pool(self.backbone(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(x), dim=-1)

    def set_backbone_trainable(self, trainable: bool) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(trainable)


INIT_MODES = ("random", "imagenet", "transferred")
_INIT_ALIASES = {"generic-pretrained": "imagenet", "arcade": "transferred"}


def assemble_classifier(
    spec: BackboneSpec,
    num_classes: int,
    init_mode: str = "random",
    source: ClassifierModel | None = None,
    class_order: tuple[str, ...] | None = None,
    seed: int = 0,
    dropout_rate: float = 0.2,
) -> ClassifierModel:
    """Build backbone + head. The head is always freshly initialized.

    ``init_mode`` is ``random``, ``imagenet`` (alias ``generic-pretrained``)
    or ``transferred`` (alias ``arcade``), the last requiring ``source``.
    """
    mode = _INIT_ALIASES.get(init_mode, init_mode)
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init_mode {init_mode!r}")
    head = HeadSpec(num_classes, dropout_rate)
    order = tuple(class_order) if class_order is not None else tuple(str(i) for i in range(num_classes))
    if mode == "transferred":
        if source is None:
            raise ValueError("transferred init requires a source model")
        _check_same_backbone(source, spec)
    backbone = build_backbone(spec, pretrained=(mode == "imagenet"), seed=seed)
    lineage = {"mode": "imagenet" if mode == "imagenet" else "random"}
    model = ClassifierModel(spec, backbone, head, order, lineage, head_seed=seed)
    if mode == "transferred":
        transfer_backbone_weights(source, model, seed=seed)
    return model


def _check_same_backbone(source: ClassifierModel, spec: BackboneSpec) -> None:
    if source.spec.name != spec.name:
        raise BackboneMismatch(f"source backbone {source.spec.name} does not match target {spec.name}")


def transfer_backbone_weights(source: ClassifierModel, target: ClassifierModel, seed: int = 0) -> ClassifierModel:
    """Copy every backbone tensor (parameters and buffers) from ``source``; re-initialize the head."""
    _check_same_backbone(source, target.spec)
    state = {k: v.detach().clone() for k, v in source.backbone.state_dict().items()}
    target.backbone.load_state_dict(state, strict=True)
    target.reset_head(seed)
    target.lineage = {
        "mode": "transferred",
        "source_backbone": source.spec.name,
        "source_hash": getattr(source, "content_hash", None),
        "source_lineage": source.lineage,
    }
    return target


# --- preprocessing -------------------------------------------------------------


def load_rgb(image: str | os.PathLike | bytes | Image.Image) -> Image.Image:
    """Decode to 3-channel RGB; palette and grayscale images are expanded."""
    if isinstance(image, Image.Image):
        img = image
    elif isinstance(image, (bytes, bytearray)):
        img = Image.open(io.BytesIO(image))
    else:
        img = Image.open(image)
    img.load()
    if img.mode == "P" and "transparency" in img.info:
        img = img.convert("RGBA")
    return img.convert("RGB")


def preprocess(image, resolution: int, preprocessing_id: str = "imagenet") -> torch.Tensor:
    """Resize to ``resolution`` x ``resolution`` (aspect ratio not kept), bilinear, then normalize."""
    consts = PREPROCESSING[preprocessing_id]
    img = load_rgb(image).resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(consts["mean"], dtype=np.float32)) / np.asarray(consts["std"], dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
