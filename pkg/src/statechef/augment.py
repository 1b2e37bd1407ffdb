"""Online image augmentation with deterministic, seeded parameter draws.

All randomness comes from (config.seed, draw position), so a fixed seed and
draw yield bit-identical outputs no matter which worker runs the transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import ndimage

__all__ = ["AugmentationConfig", "augment_view"]

DrawState = Union[int, Sequence[int], np.random.Generator]


@dataclass(frozen=True)
class AugmentationConfig:
    """Enabled ops and their parameters; zero values disable an op."""

    flip_probability: float = 0.5
    rotation_degrees: float = 15.0
    shift_fraction: float = 0.10
    zoom_range: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must be in [0,1], got {self.flip_probability}")
        for name in ("rotation_degrees", "shift_fraction", "zoom_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def enabled(self) -> bool:
        return (
            self.flip_probability > 0
            or self.rotation_degrees > 0
            or self.shift_fraction > 0
            or self.zoom_range > 0
        )

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(flip_probability=0.0, rotation_degrees=0.0, shift_fraction=0.0, zoom_range=0.0)

    def to_json(self) -> dict:
        return {
            "flip_probability": self.flip_probability,
            "rotation_degrees": self.rotation_degrees,
            "shift_fraction": self.shift_fraction,
            "zoom_range": self.zoom_range,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentationConfig":
        return cls(**doc)


def _rng_for(config: AugmentationConfig, draw: DrawState) -> np.random.Generator:
    if isinstance(draw, np.random.Generator):
        return draw
    if isinstance(draw, (int, np.integer)):
        return np.random.default_rng([config.seed, int(draw)])
    return np.random.default_rng([config.seed, *[int(d) for d in draw]])


def augment_view(image: np.ndarray, config: AugmentationConfig, draw: DrawState) -> np.ndarray:
    """Apply the configured flip/rotate/shift/zoom ops to one HxWx3 image.

    The output always has the input's shape and dtype. With every op
    disabled the input comes back bit-exact; otherwise geometry is a single
    bilinear warp with edge-replication padding.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected an HxWx3 image with H,W >= 1, got shape {image.shape}")

    if not config.enabled:
        return image.copy()

    rng = _rng_for(config, draw)
    out = image

    if config.flip_probability > 0 and rng.random() < config.flip_probability:
        out = out[:, ::-1, :]

    angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees) if config.rotation_degrees > 0 else 0.0
    if config.shift_fraction > 0:
        shift_y = rng.uniform(-config.shift_fraction, config.shift_fraction) * image.shape[0]
        shift_x = rng.uniform(-config.shift_fraction, config.shift_fraction) * image.shape[1]
    else:
        shift_y = shift_x = 0.0
    scale = 1.0 + rng.uniform(-config.zoom_range, config.zoom_range) if config.zoom_range > 0 else 1.0

    if angle == 0.0 and shift_y == 0.0 and shift_x == 0.0 and scale == 1.0:
        return np.ascontiguousarray(out)

    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    # Map output pixel coords to input coords: rotate/zoom about the image
    # center, then undo the translation.
    linear = np.array([[cos, -sin], [sin, cos]]) / scale
    center = (np.asarray(out.shape[:2], dtype=float) - 1.0) / 2.0
    offset = center - linear @ (center + np.array([shift_y, shift_x]))
    matrix = np.eye(3)
    matrix[:2, :2] = linear
    full_offset = np.array([offset[0], offset[1], 0.0])

    warped = ndimage.affine_transform(
        out.astype(np.float64),
        matrix,
        offset=full_offset,
        order=1,
        mode="nearest",
        output=np.float64,
    )
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        warped = np.clip(np.rint(warped), info.min, info.max)
    return warped.astype(image.dtype)
