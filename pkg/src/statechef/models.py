"""Classifier construction: truncated residual backbone plus a convolutional head.

The backbone is a bottleneck ResNet cut at a given activation index
(counting ReLUs from the input; the stem contributes one, every bottleneck
block three). The head stacks a 1x1 convolution, two spatial convolutions
(batch norm and ReLU after each), global average pooling, and a dense
softmax layer. Two providers exist: the full-size 50-layer topology with
optional pretrained weights, and a tiny randomly initialized variant so the
whole pipeline is testable without downloads.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

__all__ = [
    "PROVIDERS",
    "FREEZE_SCOPES",
    "ModelSpecError",
    "BackboneSpec",
    "HeadSpec",
    "StateClassifier",
    "build_model",
    "predict",
    "replace_head",
    "snapshot_parameters",
    "parameter_count",
    "apply_freeze",
    "frozen_submodules",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

PROVIDERS = ("production-pretrained", "tiny-random-test")

# Freeze scopes shared with the training engine. "backbone_only" freezes the
# backbone for the initial transfer phase; "added_layers_unfrozen" names the
# fine-tuning stage where the added head layers rejoin training (the final
# layer was already trainable). Both leave exactly the head trainable.
FREEZE_SCOPES = ("all_but_final", "backbone_only", "added_layers_unfrozen", "none")

_TOPOLOGIES = {
    "production-pretrained": {
        "family": "resnet50",
        "blocks": (3, 4, 6, 3),
        "base_width": 64,
        "default_truncation": 46,
        "normalization": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
    },
    "tiny-random-test": {
        "family": "tiny-resnet",
        "blocks": (1, 1),
        "base_width": 4,
        "default_truncation": 7,
        "normalization": ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
    },
}


class ModelSpecError(ValueError):
    """Raised for invalid model specs or malformed inputs."""


def _total_activations(blocks: Sequence[int]) -> int:
    return 1 + 3 * sum(blocks)


@dataclass(frozen=True)
class BackboneSpec:
    provider: str = "tiny-random-test"
    truncation: int = 0  # 0 means the provider default
    pretrained: bool = False
    family: str = ""

    def __post_init__(self):
        if self.provider not in _TOPOLOGIES:
            raise ModelSpecError(
                f"unknown backbone provider {self.provider!r}; known: {PROVIDERS}"
            )
        topo = _TOPOLOGIES[self.provider]
        if self.truncation == 0:
            object.__setattr__(self, "truncation", topo["default_truncation"])
        total = _total_activations(topo["blocks"])
        if not 1 <= self.truncation <= total:
            raise ModelSpecError(
                f"truncation index {self.truncation} out of range for "
                f"{self.provider} (1..{total})"
            )
        if not self.family:
            object.__setattr__(self, "family", topo["family"])

    @property
    def blocks(self) -> tuple[int, ...]:
        return tuple(_TOPOLOGIES[self.provider]["blocks"])

    @property
    def base_width(self) -> int:
        return _TOPOLOGIES[self.provider]["base_width"]

    @property
    def normalization(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        return _TOPOLOGIES[self.provider]["normalization"]

    @classmethod
    def production(cls, truncation: int = 46, pretrained: bool = False) -> "BackboneSpec":
        return cls(provider="production-pretrained", truncation=truncation, pretrained=pretrained)

    @classmethod
    def tiny(cls, truncation: int = 7) -> "BackboneSpec":
        return cls(provider="tiny-random-test", truncation=truncation, pretrained=False)


@dataclass(frozen=True)
class HeadSpec:
    pointwise_channels: int = 512
    conv_channels: int = 512
    kernel: int = 3
    class_count: int = 11

    def __post_init__(self):
        if self.class_count < 2:
            raise ModelSpecError(f"class_count must be >= 2, got {self.class_count}")
        if self.pointwise_channels < 1 or self.conv_channels < 1:
            raise ModelSpecError("channel counts must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ModelSpecError(f"kernel must be a positive odd size, got {self.kernel}")

    @classmethod
    def tiny(cls, class_count: int = 11) -> "HeadSpec":
        return cls(pointwise_channels=8, conv_channels=8, kernel=3, class_count=class_count)


class Bottleneck(nn.Module):
    """1x1 -> 3x3 -> 1x1 residual block, three ReLU activations."""

    expansion = 4

    def __init__(self, inplanes: int, planes: int, stride: int = 1, downsample: nn.Module | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, planes * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


class PartialBottleneck(nn.Module):
    """Leading portion of a bottleneck for cuts that land inside a block."""

    def __init__(self, inplanes: int, planes: int, stride: int, depth: int):
        super().__init__()
        assert depth in (1, 2)
        self.depth = depth
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        if depth == 2:
            self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
            self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        if self.depth == 2:
            out = self.relu(self.bn2(self.conv2(out)))
        return out


class TruncatedResNet(nn.Module):
    """Bottleneck ResNet built only up to the requested activation index."""

    def __init__(self, blocks: Sequence[int], base_width: int, truncation: int):
        super().__init__()
        total = _total_activations(blocks)
        if not 1 <= truncation <= total:
            raise ModelSpecError(f"truncation index {truncation} out of range (1..{total})")
        self.truncation = truncation

        self.conv1 = nn.Conv2d(3, base_width, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(base_width)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)

        acts = 1  # stem ReLU
        inplanes = base_width
        out_channels = base_width
        self.layer_names: list[str] = []
        for stage, count in enumerate(blocks):
            planes = base_width * (2**stage)
            stage_modules: list[nn.Module] = []
            for j in range(count):
                if acts >= truncation:
                    break
                stride = 2 if (stage > 0 and j == 0) else 1
                remaining = truncation - acts
                if remaining >= 3:
                    downsample = None
                    if stride != 1 or inplanes != planes * Bottleneck.expansion:
                        downsample = nn.Sequential(
                            nn.Conv2d(inplanes, planes * Bottleneck.expansion, 1, stride=stride, bias=False),
                            nn.BatchNorm2d(planes * Bottleneck.expansion),
                        )
                    stage_modules.append(Bottleneck(inplanes, planes, stride, downsample))
                    inplanes = planes * Bottleneck.expansion
                    out_channels = inplanes
                    acts += 3
                else:
                    stage_modules.append(PartialBottleneck(inplanes, planes, stride, remaining))
                    out_channels = planes
                    acts += remaining
                    break
            if stage_modules:
                name = f"layer{stage + 1}"
                setattr(self, name, nn.Sequential(*stage_modules))
                self.layer_names.append(name)
            if acts >= truncation:
                break
        self.out_channels = out_channels

    def forward(self, x):
        x = self.relu(self.bn1(self.conv1(x)))
        if not self.layer_names:
            return x
        x = self.maxpool(x)
        for name in self.layer_names:
            x = getattr(self, name)(x)
        return x


class ClassifierHead(nn.Module):
    """1x1 conv, two spatial convs (BN + ReLU each), global pooling, dense layer."""

    def __init__(self, in_channels: int, spec: HeadSpec):
        super().__init__()
        k, pad = spec.kernel, spec.kernel // 2
        self.pointwise = nn.Conv2d(in_channels, spec.pointwise_channels, 1, bias=False)
        self.bn_pointwise = nn.BatchNorm2d(spec.pointwise_channels)
        self.conv_a = nn.Conv2d(spec.pointwise_channels, spec.conv_channels, k, padding=pad, bias=False)
        self.bn_a = nn.BatchNorm2d(spec.conv_channels)
        self.conv_b = nn.Conv2d(spec.conv_channels, spec.conv_channels, k, padding=pad, bias=False)
        self.bn_b = nn.BatchNorm2d(spec.conv_channels)
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(spec.conv_channels, spec.class_count)

    def forward(self, x):
        x = self.relu(self.bn_pointwise(self.pointwise(x)))
        x = self.relu(self.bn_a(self.conv_a(x)))
        x = self.relu(self.bn_b(self.conv_b(x)))
        x = self.pool(x).flatten(1)
        return self.fc(x)


class StateClassifier(nn.Module):
    """Backbone + head; forward yields logits, predict() yields probabilities."""

    def __init__(self, backbone: TruncatedResNet, head: ClassifierHead,
                 backbone_spec: BackboneSpec, head_spec: HeadSpec):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        mean, std = backbone_spec.normalization
        self.input_mean = np.asarray(mean, dtype=np.float32)
        self.input_std = np.asarray(std, dtype=np.float32)

    @property
    def class_count(self) -> int:
        return self.head_spec.class_count

    def forward(self, x):
        return self.head(self.backbone(x))

    def prepare_batch(self, batch: np.ndarray) -> torch.Tensor:
        """NHWC array (uint8 or float in [0,1]) -> normalized NCHW tensor."""
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise ModelSpecError(f"expected an NxHxWx3 batch, got shape {batch.shape}")
        x = batch.astype(np.float32)
        if np.issubdtype(batch.dtype, np.integer):
            x = x / 255.0
        x = (x - self.input_mean) / self.input_std
        dtype = next(self.parameters()).dtype
        return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(dtype)

    @torch.no_grad()
    def predict(self, batch: np.ndarray, chunk_size: int = 64) -> np.ndarray:
        """Class probabilities for an NxHxWx3 batch; each row sums to 1."""
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise ModelSpecError(f"expected an NxHxWx3 batch, got shape {batch.shape}")
        if batch.shape[0] == 0:
            return np.zeros((0, self.class_count), dtype=np.float64)
        was_training = self.training
        self.eval()
        try:
            outputs = []
            for start in range(0, batch.shape[0], chunk_size):
                x = self.prepare_batch(batch[start : start + chunk_size])
                outputs.append(torch.softmax(self(x), dim=1).cpu().numpy())
        finally:
            if was_training:
                self.train()
        return np.concatenate(outputs).astype(np.float64)


def _load_pretrained_resnet50(backbone: TruncatedResNet) -> None:
    try:
        from torchvision.models import ResNet50_Weights, resnet50
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ModelSpecError(
            "pretrained weights need torchvision (install the 'pretrained' extra)"
        ) from exc
    reference = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1).state_dict()
    own = backbone.state_dict()
    usable = {k: v for k, v in reference.items() if k in own and own[k].shape == v.shape}
    missing = sorted(set(own) - set(usable))
    if missing:
        raise ModelSpecError(f"pretrained weights missing keys: {missing[:5]}")
    backbone.load_state_dict(usable, strict=True)


def build_model(
    backbone_spec: BackboneSpec | None = None,
    head_spec: HeadSpec | None = None,
    seed: int = 0,
) -> StateClassifier:
    """Construct the classifier; initialization is deterministic under seed."""
    backbone_spec = backbone_spec or BackboneSpec()
    head_spec = head_spec or HeadSpec()
    torch.manual_seed(seed)
    backbone = TruncatedResNet(backbone_spec.blocks, backbone_spec.base_width, backbone_spec.truncation)
    if backbone_spec.pretrained:
        if backbone_spec.provider != "production-pretrained":
            raise ModelSpecError(f"provider {backbone_spec.provider!r} has no pretrained weights")
        _load_pretrained_resnet50(backbone)
    head = ClassifierHead(backbone.out_channels, head_spec)
    return StateClassifier(backbone, head, backbone_spec, head_spec)


def predict(model: StateClassifier, batch: np.ndarray) -> np.ndarray:
    return model.predict(batch)


def replace_head(model: StateClassifier, new_class_count: int, seed: int = 0) -> StateClassifier:
    """Swap the final dense layer for one with new_class_count units.

    Every other parameter of the returned model is bit-identical to the
    input model, which is left untouched.
    """
    if new_class_count < 2:
        raise ModelSpecError(f"class_count must be >= 2, got {new_class_count}")
    new_model = copy.deepcopy(model)
    torch.manual_seed(seed)
    new_model.head.fc = nn.Linear(model.head_spec.conv_channels, new_class_count)
    new_model.head_spec = replace(model.head_spec, class_count=new_class_count)
    return new_model


def snapshot_parameters(model: nn.Module, prefix: str = "") -> dict[str, str]:
    """Content digest per named parameter and buffer tensor."""
    digests: dict[str, str] = {}
    for name, tensor in list(model.named_parameters()) + list(model.named_buffers()):
        if prefix and not name.startswith(prefix):
            continue
        data = tensor.detach().cpu().contiguous().numpy().tobytes()
        digests[name] = hashlib.sha256(data).hexdigest()
    return digests


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _trainable_prefixes(scope: str) -> tuple[str, ...]:
    if scope == "none":
        return ("backbone.", "head.")
    if scope in ("backbone_only", "added_layers_unfrozen"):
        return ("head.",)
    if scope == "all_but_final":
        return ("head.fc.",)
    raise ModelSpecError(f"unknown freeze scope {scope!r}; known: {FREEZE_SCOPES}")


def apply_freeze(model: StateClassifier, scope: str) -> None:
    """Set requires_grad so only the scope's trainable parameters update."""
    prefixes = _trainable_prefixes(scope)
    for name, param in model.named_parameters():
        param.requires_grad = any(name.startswith(p) for p in prefixes)


def frozen_submodules(model: StateClassifier, scope: str) -> list[nn.Module]:
    """Modules to hold in eval mode during training (freezes BN statistics)."""
    if scope == "none":
        return []
    if scope in ("backbone_only", "added_layers_unfrozen"):
        return [model.backbone]
    if scope == "all_but_final":
        return [model.backbone] + [m for n, m in model.head.named_children() if n != "fc"]
    raise ModelSpecError(f"unknown freeze scope {scope!r}; known: {FREEZE_SCOPES}")


def trainable_parameter_names(model: StateClassifier, scope: str) -> set[str]:
    prefixes = _trainable_prefixes(scope)
    return {n for n, _ in model.named_parameters() if any(n.startswith(p) for p in prefixes)}


def gradient_check(
    model: StateClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every trainable head parameter of a double-precision copy of the
    model against finite differences of the cross-entropy loss. The model is
    evaluated in inference mode so the loss is a pure function of the
    parameters. A difference step can straddle a ReLU kink and corrupt the
    estimate for that coordinate, so the step shrinks until the estimate
    stabilizes (the loss is differentiable at the point itself almost
    surely; only the probe interval needs to clear the kink).
    """
    probe = copy.deepcopy(model).double()
    probe.eval()
    x = probe.prepare_batch(images)
    y = torch.from_numpy(np.asarray(labels, dtype=np.int64))

    def loss_value() -> float:
        return F.cross_entropy(probe(x), y).item()

    loss = F.cross_entropy(probe(x), y)
    head_params = [
        (name, p)
        for name, p in probe.named_parameters()
        if name.startswith("head.") and p.requires_grad
    ]
    grads = torch.autograd.grad(loss, [p for _, p in head_params])

    def relative_error(a: float, b: float) -> float:
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    worst = 0.0
    with torch.no_grad():
        for (_name, param), grad in zip(head_params, grads):
            flat = param.view(-1)
            grad_flat = grad.reshape(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                analytic = grad_flat[idx].item()
                best = np.inf
                for h in (step, step / 16, step / 256):
                    flat[idx] = original + h
                    plus = loss_value()
                    flat[idx] = original - h
                    minus = loss_value()
                    flat[idx] = original
                    numeric = (plus - minus) / (2 * h)
                    best = min(best, relative_error(numeric, analytic))
                    if best <= 1e-4:
                        break
                worst = max(worst, best)
    return worst


def _spec_document(model: StateClassifier, class_names: Sequence[str] | None) -> dict:
    return {
        "backbone_spec": asdict(model.backbone_spec),
        "head_spec": asdict(model.head_spec),
        "class_names": list(class_names) if class_names is not None else None,
        "normalization": {
            "mean": model.input_mean.tolist(),
            "std": model.input_std.tolist(),
        },
        "parameter_count": parameter_count(model),
    }


def save_checkpoint(
    model: StateClassifier,
    path: str | Path,
    class_names: Sequence[str] | None = None,
    history_ref: str | None = None,
) -> Path:
    """Write <path>.pt parameters and a <path>.json metadata sidecar."""
    path = Path(path)
    weights_path = path.with_suffix(".pt")
    sidecar_path = path.with_suffix(".json")
    torch.save(model.state_dict(), weights_path)
    doc = _spec_document(model, class_names)
    doc["spec_hash"] = hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()
    ).hexdigest()
    doc["history_ref"] = history_ref
    doc["weights"] = weights_path.name
    sidecar_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[StateClassifier, dict]:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    weights_path = path.with_suffix(".pt")
    try:
        doc = json.loads(sidecar_path.read_text())
    except OSError as exc:
        raise ModelSpecError(f"cannot read checkpoint sidecar {sidecar_path}: {exc}") from exc
    backbone_doc = dict(doc["backbone_spec"])
    backbone_doc["pretrained"] = False  # weights come from the archive
    model = build_model(BackboneSpec(**backbone_doc), HeadSpec(**doc["head_spec"]))
    state = torch.load(weights_path, weights_only=True)
    model.load_state_dict(state)
    return model, doc
