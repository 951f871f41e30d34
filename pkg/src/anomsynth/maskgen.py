"""Inpainting-mask generation by rejection sampling.

A random rectangle is accepted only if it overlaps the object foreground
strongly enough and covers enough texture edges; the accepted region yields
the inpainting mask, the adaptive texture image (texture pixels inside the
closed edge-region support, black elsewhere), and the latent-resolution
texture mask used for latent blending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import LATENT_DOWNSCALE, Segmenter
from .errors import GenerationFailedError, InvalidInputError
from .imageops import (
    DEFAULT_CANNY_HIGH,
    DEFAULT_CANNY_LOW,
    BinaryMask,
    area_fraction,
    canny,
    close_texture,
    resize_image,
    to_gray,
)

FOREGROUND_OVERLAP = "foreground overlap"
TEXTURE_OVERLAP = "texture overlap"


@dataclass(frozen=True)
class MaskGenConfig:
    """Rectangle-size rates, acceptance thresholds, and the retry budget."""

    l_rate: float = 0.1
    h_rate: float = 0.3
    thresh1: float = 0.3
    thresh2: float = 0.05
    max_retries: int = 200

    def __post_init__(self):
        if not (0.0 < self.l_rate < self.h_rate <= 1.0):
            raise InvalidInputError(f"need 0 < l_rate < h_rate <= 1, got {self.l_rate}, {self.h_rate}")
        if not (0.0 < self.thresh1 < 1.0 and 0.0 < self.thresh2 < 1.0):
            raise InvalidInputError("thresholds must lie in (0, 1)")
        if self.max_retries < 1:
            raise InvalidInputError("max_retries must be positive")

    def to_dict(self) -> dict:
        return {
            "l_rate": self.l_rate,
            "h_rate": self.h_rate,
            "thresh1": self.thresh1,
            "thresh2": self.thresh2,
            "max_retries": self.max_retries,
        }


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    height: int
    width: int

    def to_mask(self, image_height: int, image_width: int) -> BinaryMask:
        bits = np.zeros((image_height, image_width), dtype=bool)
        bits[self.top : self.top + self.height, self.left : self.left + self.width] = True
        return BinaryMask(bits)

    def to_dict(self) -> dict:
        return {"top": self.top, "left": self.left, "height": self.height, "width": self.width}


@dataclass
class MaskBundle:
    """Accepted sample: inpainting mask, adaptive texture, latent texture mask."""

    m_in: BinaryMask
    x_texture: np.ndarray
    m_texture_latent: BinaryMask
    texture_support: BinaryMask
    rect: Rect
    retries_used: int


def sample_rect(height: int, width: int, config: MaskGenConfig, rng: np.random.Generator) -> Rect:
    """Uniform rectangle with sides in [l_rate*dim, h_rate*dim], fully inside the image."""
    if height * config.l_rate < 1.0 or width * config.l_rate < 1.0:
        raise InvalidInputError(
            f"image {height}x{width} smaller than 1/l_rate={1 / config.l_rate:.0f} px per side"
        )
    lo_h, hi_h = int(np.ceil(config.l_rate * height)), int(np.floor(config.h_rate * height))
    lo_w, hi_w = int(np.ceil(config.l_rate * width)), int(np.floor(config.h_rate * width))
    if lo_h > hi_h or lo_w > hi_w:
        raise InvalidInputError("no integer side length satisfies the rate bounds")
    rect_h = int(rng.integers(lo_h, hi_h + 1))
    rect_w = int(rng.integers(lo_w, hi_w + 1))
    top = int(rng.integers(0, height - rect_h + 1))
    left = int(rng.integers(0, width - rect_w + 1))
    return Rect(top=top, left=left, height=rect_h, width=rect_w)


def pool_to_latent(mask: BinaryMask, downscale: int = LATENT_DOWNSCALE) -> BinaryMask:
    """Any-true pooling of a pixel mask into latent resolution blocks."""
    h, w = mask.height, mask.width
    if h % downscale or w % downscale:
        raise InvalidInputError(f"mask dims {h}x{w} not divisible by {downscale}")
    blocks = mask.bits.reshape(h // downscale, downscale, w // downscale, downscale)
    return BinaryMask(blocks.any(axis=(1, 3)))


def generate(
    normal_image: np.ndarray,
    matched_texture: np.ndarray,
    config: MaskGenConfig,
    rng: np.random.Generator,
    segmenter: Segmenter,
    canny_low: float = DEFAULT_CANNY_LOW,
    canny_high: float = DEFAULT_CANNY_HIGH,
    downscale: int = LATENT_DOWNSCALE,
) -> MaskBundle:
    """Rejection-sample a mask bundle for one normal image / texture pair.

    A rectangle is kept only if (1) more than ``thresh1`` of it lies on the
    object foreground and (2) more than ``thresh2`` of the overlap lies on
    texture edges. The texture is registered to the image frame by resizing
    before its edge map is taken, so one coordinate system addresses both.
    """
    height, width = normal_image.shape[:2]
    m_u = segmenter.segment_foreground(normal_image)
    texture = matched_texture
    if texture.shape[:2] != (height, width):
        texture = resize_image(texture, height, width)
    m_ca = canny(to_gray(texture), canny_low, canny_high)

    last_reason = FOREGROUND_OVERLAP
    for attempt in range(config.max_retries):
        rect = sample_rect(height, width, config, rng)
        m_r = rect.to_mask(height, width)
        m_ov = m_r & m_u
        if area_fraction(m_ov, base=m_r) <= config.thresh1:
            last_reason = FOREGROUND_OVERLAP
            continue
        if area_fraction(m_ov & m_ca, base=m_ov) <= config.thresh2:
            last_reason = TEXTURE_OVERLAP
            continue

        m_in = m_ov
        support = close_texture(m_in & m_ca) & m_in
        x_texture = np.where(support.bits[:, :, None], texture, 0.0)
        return MaskBundle(
            m_in=m_in,
            x_texture=x_texture,
            m_texture_latent=pool_to_latent(support, downscale),
            texture_support=support,
            rect=rect,
            retries_used=attempt,
        )
    raise GenerationFailedError(last_reason, config.max_retries)
