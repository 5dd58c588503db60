"""Deterministic image augmentations over flattened [0, 1] grayscale images.

Three kinds: brightness/contrast jitter, horizontal shear with
nearest-neighbor resampling, and cutout.  Outputs keep the input shape and
stay in [0, 1]; given the same (spec, seed) the output is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("jitter", "shear", "cutout")


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    """One augmentation kind with its magnitude and a stream id that
    decorrelates otherwise-identical specs."""

    kind: str
    jitter_scale: float = 0.2
    shear_max_deg: float = 30.0
    cutout_side: int = 2
    stream_id: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AugmentationError(f"unknown augmentation kind: {self.kind!r}")
        if self.jitter_scale < 0 or self.shear_max_deg < 0 or self.cutout_side < 0:
            raise AugmentationError("augmentation magnitudes must be non-negative")


def default_pool(jitter_scale: float = 0.2, shear_max_deg: float = 30.0,
                 cutout_side: int = 2) -> list[AugmentationSpec]:
    return [
        AugmentationSpec("jitter", jitter_scale=jitter_scale, stream_id=0),
        AugmentationSpec("shear", shear_max_deg=shear_max_deg, stream_id=1),
        AugmentationSpec("cutout", cutout_side=cutout_side, stream_id=2),
    ]


def shear_column_shift(angle_deg: float, row: int, height: int) -> int:
    """Nearest-neighbor column shift of ``row`` under a horizontal shear
    about the vertical center; shared with tests as the coordinate oracle."""
    center = (height - 1) / 2.0
    return int(round(np.tan(np.deg2rad(angle_deg)) * (row - center)))


def _apply(x_img: np.ndarray, spec: AugmentationSpec,
           rng: np.random.Generator) -> np.ndarray:
    h, w = x_img.shape
    if spec.kind == "jitter":
        contrast = 1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale)
        brightness = rng.uniform(-spec.jitter_scale, spec.jitter_scale)
        return np.clip(contrast * (x_img - 0.5) + 0.5 + brightness, 0.0, 1.0)
    if spec.kind == "shear":
        angle = rng.uniform(-spec.shear_max_deg, spec.shear_max_deg)
        out = np.zeros_like(x_img)
        for r in range(h):
            shift = shear_column_shift(angle, r, h)
            lo, hi = max(0, shift), min(w, w + shift)
            if lo < hi:
                out[r, lo:hi] = x_img[r, lo - shift:hi - shift]
        return out
    # cutout: zero a square placed fully inside the image
    side = min(spec.cutout_side, h, w)
    if side == 0:
        return x_img.copy()
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = x_img.copy()
    out[top:top + side, left:left + side] = 0.0
    return out


def augment(x: np.ndarray, spec: AugmentationSpec, image_hw: tuple[int, int],
            seed: int) -> np.ndarray:
    """Augmented copy of a flattened image; deterministic in (spec, seed)."""
    h, w = image_hw
    x = np.asarray(x, dtype=np.float64)
    if x.size != h * w:
        raise AugmentationError(
            f"augment: {x.size} features do not form a {h}x{w} image")
    rng = np.random.default_rng((int(seed) << 8) ^ (spec.stream_id + 1))
    return _apply(x.reshape(h, w), spec, rng).reshape(x.shape)


def draw_spec(pool: list[AugmentationSpec], rng: np.random.Generator
              ) -> AugmentationSpec:
    """Uniform draw from the augmentation pool."""
    if not pool:
        raise AugmentationError("augmentation pool is empty")
    return pool[int(rng.integers(0, len(pool)))]
