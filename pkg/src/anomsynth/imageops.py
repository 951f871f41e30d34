"""Classical image algorithms the synthesis pipeline depends on.

Everything here is implemented directly on numpy so behavior is pinned by
this module, not by whichever vision library happens to be installed:
Canny edge extraction, 5x5 binary closing of an inverted mask, windowed
SSIM maps, area fractions, and connected-component counting.

Conventions: luminance images are row-major float arrays in [0, 1]; masks
are boolean arrays of the same shape; border handling is reflect-padding
everywhere; color is converted to luminance with ITU-R BT.601 weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import InvalidInputError, UndefinedBaseError

# Luminance weights for RGB -> gray (ITU-R BT.601).
_BT601 = np.array([0.299, 0.587, 0.114])

# Default Canny hysteresis thresholds as fractions of the max gradient
# magnitude; exposed so run manifests can record the values actually used.
DEFAULT_CANNY_LOW = 0.1
DEFAULT_CANNY_HIGH = 0.3


@dataclass(frozen=True)
class GrayImage:
    """Single-channel luminance image with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError(f"gray image must be 2-D and nonempty, got shape {v.shape}")
        if np.isnan(v).any() or v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInputError("gray image values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean pixel mask; true bits mark the annotated region."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.dtype != np.bool_:
            b = b.astype(bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise InvalidInputError(f"mask must be 2-D and nonempty, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits | other.bits)

    def __invert__(self) -> "BinaryMask":
        return BinaryMask(~self.bits)


# ---------------------------------------------------------------------------
# image I/O and color handling


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG/JPEG file as an (H, W, 3) float array in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) or (H, W) float array as PNG, clipping to [0, 1].

    ``path`` may be a filesystem path or a writable binary file object.
    """
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_mask(path: str | Path) -> BinaryMask:
    """Read a single-channel 0/255 PNG as a mask (any nonzero pixel is true)."""
    with Image.open(path) as im:
        gray = im.convert("L")
        return BinaryMask(np.asarray(gray) > 127)


def save_mask(path, mask: BinaryMask) -> None:
    """Write a mask as a single-channel PNG with 0/255 encoding.

    ``path`` may be a filesystem path or a writable binary file object.
    """
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def to_gray(image: np.ndarray | GrayImage) -> GrayImage:
    """Project a color image to luminance; gray inputs pass through."""
    if isinstance(image, GrayImage):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return GrayImage(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return GrayImage(np.clip(arr @ _BT601, 0.0, 1.0))
    raise InvalidInputError(f"expected (H, W) or (H, W, 3), got shape {arr.shape}")


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) float image."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    resized = Image.fromarray(data).resize((width, height), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# convolution primitives (reflect padding)


def _gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_sep(values: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    """Separable 2-D convolution with a symmetric 1-D kernel, reflect borders."""
    r = len(kernel1d) // 2
    padded = np.pad(values, ((r, r), (0, 0)), mode="reflect")
    out = np.tensordot(sliding_window_view(padded, len(kernel1d), axis=0), kernel1d, axes=([2], [0]))
    padded = np.pad(out, ((0, 0), (r, r)), mode="reflect")
    return np.tensordot(sliding_window_view(padded, len(kernel1d), axis=1), kernel1d, axes=([2], [0]))


def _convolve2d(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Full 2-D correlation with reflect borders (kernels here are symmetric
    up to sign, so correlation vs. convolution only flips Sobel's sign)."""
    rh, rw = kernel.shape[0] // 2, kernel.shape[1] // 2
    padded = np.pad(values, ((rh, rh), (rw, rw)), mode="reflect")
    windows = sliding_window_view(padded, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def gaussian_blur(img: GrayImage, sigma: float = 1.4, radius: int = 2) -> GrayImage:
    """Gaussian smoothing with a (2*radius+1)^2 separable kernel."""
    blurred = _convolve_sep(img.values, _gaussian_kernel1d(sigma, radius))
    return GrayImage(np.clip(blurred, 0.0, 1.0))


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_magnitude(img: GrayImage) -> np.ndarray:
    """Gradient magnitude from 3x3 Sobel filters (no smoothing applied)."""
    gx = _convolve2d(img.values, _SOBEL_X)
    gy = _convolve2d(img.values, _SOBEL_Y)
    return np.hypot(gx, gy)


# ---------------------------------------------------------------------------
# Canny


def _shifted(padded: np.ndarray, dy: int, dx: int, h: int, w: int) -> np.ndarray:
    return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]


def canny(img: GrayImage, low_thresh: float = DEFAULT_CANNY_LOW, high_thresh: float = DEFAULT_CANNY_HIGH) -> BinaryMask:
    """Edge mask via blur, Sobel, non-maximum suppression, and hysteresis.

    Thresholds are fractions of the maximum gradient magnitude; pixels at or
    above ``high_thresh`` seed edges, pixels at or above ``low_thresh`` join
    an edge if 8-connected to a seed.
    """
    if not (0.0 < low_thresh < high_thresh <= 1.0):
        raise InvalidInputError(f"need 0 < low < high <= 1, got low={low_thresh}, high={high_thresh}")
    if img.height < 5 or img.width < 5:
        raise InvalidInputError(f"image too small for 5x5 smoothing kernel: {img.height}x{img.width}")

    smoothed = gaussian_blur(img)
    gx = _convolve2d(smoothed.values, _SOBEL_X)
    gy = _convolve2d(smoothed.values, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0.0:
        return BinaryMask(np.zeros(mag.shape, dtype=bool))

    # Quantize gradient direction into 4 bins and keep local maxima along it.
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="reflect")
    neighbor_pairs = {
        0: ((0, 1), (0, -1)),
        1: ((1, -1), (-1, 1)),
        2: ((1, 0), (-1, 0)),
        3: ((-1, -1), (1, 1)),
    }
    bins = np.zeros(mag.shape, dtype=np.uint8)
    bins[(angle >= 22.5) & (angle < 67.5)] = 1
    bins[(angle >= 67.5) & (angle < 112.5)] = 2
    bins[(angle >= 112.5) & (angle < 157.5)] = 3

    keep = np.zeros(mag.shape, dtype=bool)
    for b, ((dy1, dx1), (dy2, dx2)) in neighbor_pairs.items():
        sel = bins == b
        n1 = _shifted(padded, dy1, dx1, h, w)
        n2 = _shifted(padded, dy2, dx2, h, w)
        keep |= sel & (mag >= n1) & (mag >= n2)
    suppressed = np.where(keep, mag, 0.0)

    strong = (suppressed >= high_thresh * peak) & (suppressed > 0)
    weak = (suppressed >= low_thresh * peak) & (suppressed > 0)

    # Hysteresis: grow the strong set through weak pixels until stable.
    edges = strong.copy()
    while True:
        grown = _dilate(edges, 3) & weak
        if grown.sum() == edges.sum():
            break
        edges = grown
    return BinaryMask(edges)


# ---------------------------------------------------------------------------
# binary morphology


def _dilate(bits: np.ndarray, size: int) -> np.ndarray:
    padded = np.pad(bits, size // 2, mode="reflect")
    return sliding_window_view(padded, (size, size)).any(axis=(-1, -2))


def _erode(bits: np.ndarray, size: int) -> np.ndarray:
    padded = np.pad(bits, size // 2, mode="reflect")
    return sliding_window_view(padded, (size, size)).all(axis=(-1, -2))


def dilate(mask: BinaryMask, size: int = 5) -> BinaryMask:
    return BinaryMask(_dilate(mask.bits, size))


def erode(mask: BinaryMask, size: int = 5) -> BinaryMask:
    return BinaryMask(_erode(mask.bits, size))


def close_texture(mask: BinaryMask) -> BinaryMask:
    """Invert, then 5x5 dilate and erode.

    Closing the inverted mask merges nearby components of the complement,
    yielding a connected support region for texture extraction.
    """
    return erode(dilate(~mask, 5), 5)


def connected_components(mask: BinaryMask) -> int:
    """Count 8-connected components of the true region (label propagation)."""
    bits = mask.bits
    if not bits.any():
        return 0
    h, w = bits.shape
    labels = np.where(bits, np.arange(h * w).reshape(h, w), -1)
    while True:
        padded = np.pad(labels, 1, mode="constant", constant_values=-1)
        windows = sliding_window_view(padded, (3, 3))
        spread = windows.max(axis=(-1, -2))
        updated = np.where(bits, np.maximum(labels, spread), -1)
        if np.array_equal(updated, labels):
            break
        labels = updated
    return len(np.unique(labels[bits]))


# ---------------------------------------------------------------------------
# SSIM


def ssim_map(a: GrayImage, b: GrayImage, sigma: float = 1.5, radius: int = 5) -> np.ndarray:
    """Per-pixel structural similarity with an 11x11 Gaussian window.

    Stabilizers follow the standard constants C1=(0.01*L)^2, C2=(0.03*L)^2
    with dynamic range L=1. Symmetric in its two arguments and exactly 1.0
    where the two inputs agree.
    """
    if a.values.shape != b.values.shape:
        raise InvalidInputError(f"dimension mismatch: {a.values.shape} vs {b.values.shape}")
    kernel = _gaussian_kernel1d(sigma, radius)
    av, bv = a.values, b.values

    mu_a = _convolve_sep(av, kernel)
    mu_b = _convolve_sep(bv, kernel)
    e_aa = _convolve_sep(av * av, kernel)
    e_bb = _convolve_sep(bv * bv, kernel)
    e_ab = _convolve_sep(av * bv, kernel)

    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b

    c1 = 0.01**2
    c2 = 0.03**2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


# ---------------------------------------------------------------------------
# area accounting


def area_fraction(mask: BinaryMask, base: BinaryMask | str = "whole-image") -> float:
    """Fraction of ``base`` covered by ``mask``.

    ``base="whole-image"`` divides by the pixel count of the frame.
    """
    if isinstance(base, str):
        if base != "whole-image":
            raise InvalidInputError(f"unknown base {base!r}")
        denom = mask.height * mask.width
        num = mask.area
    else:
        if base.bits.shape != mask.bits.shape:
            raise InvalidInputError("mask and base dimensions differ")
        denom = base.area
        if denom == 0:
            raise UndefinedBaseError("base mask has zero area")
        num = int((mask.bits & base.bits).sum())
    return num / denom
