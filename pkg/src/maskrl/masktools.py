"""Binary mask preprocessing and corruption pipelines.

High-resolution masks are cleaned with a morphological opening before
area-downsampling; corruptions (label dropout, blur-blobbing, joint-patch
approximations) mimic imperfect segmentation sources. All operations
return strictly binary uint8 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, Rng


@dataclass
class MaskPipelineConfig:
    render_scale: int = 3
    opening_kernel: int = 3
    noise_p: float = 0.0
    # blobbing factor and blur sized for the small arm sprite: strong enough
    # to visibly coarsen the mask while keeping IoU with the original >= 0.5
    approx_downsample: int = 3
    blur_sigma: float = 1.0
    threshold: float = 0.5
    joint_patch_radius: int = 5

    def validate(self) -> "MaskPipelineConfig":
        if self.render_scale < 1 or self.opening_kernel < 1 or self.approx_downsample < 1:
            raise ValueError("scale factors must be >= 1")
        if not 0.0 <= self.noise_p <= 1.0:
            raise ValueError(f"noise_p {self.noise_p} outside [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold {self.threshold} outside (0, 1)")
        if self.blur_sigma <= 0 or self.joint_patch_radius < 0:
            raise ValueError("blur_sigma must be > 0 and joint_patch_radius >= 0")
        return self


def _as_binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D mask, got shape {m.shape}")
    return (m > 0).astype(np.uint8)


def _windows(padded: np.ndarray, k: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(padded, (k, k))


def erode(mask, k: int = 3) -> np.ndarray:
    """Binary erosion with a k*k square element; outside counts as 0."""
    m = _as_binary(mask)
    pad = k // 2
    padded = np.pad(m, pad, constant_values=0)
    return _windows(padded, k).all(axis=(-2, -1)).astype(np.uint8)


def dilate(mask, k: int = 3) -> np.ndarray:
    """Binary dilation with a k*k square element."""
    m = _as_binary(mask)
    pad = k // 2
    padded = np.pad(m, pad, constant_values=0)
    return _windows(padded, k).any(axis=(-2, -1)).astype(np.uint8)


def opening(mask, k: int = 3) -> np.ndarray:
    """Erosion followed by dilation; removes features smaller than k*k."""
    return dilate(erode(mask, k), k)


def area_downsample(mask, factor: int, threshold: float = 0.5) -> np.ndarray:
    """Block-mean downsample then threshold (>= threshold -> 1)."""
    m = _as_binary(mask)
    H, W = m.shape
    if H % factor or W % factor:
        raise DimensionError(f"{H}x{W} not divisible by downsample factor {factor}")
    blocks = m.reshape(H // factor, factor, W // factor, factor).mean(axis=(1, 3))
    return (blocks >= threshold).astype(np.uint8)


def preprocess(highres_mask, config: MaskPipelineConfig, target_size: int | None = None) -> np.ndarray:
    """Opening at high resolution, then area-downsample to the target size."""
    m = _as_binary(highres_mask)
    scale = config.render_scale
    if target_size is None:
        if m.shape[0] % scale:
            raise DimensionError(
                f"high-res size {m.shape} not a multiple of render_scale {scale}")
        target_size = m.shape[0] // scale
    if m.shape != (target_size * scale, target_size * scale):
        raise DimensionError(
            f"high-res mask {m.shape} != target {target_size} * scale {scale}")
    opened = opening(m, config.opening_kernel)
    return area_downsample(opened, scale, config.threshold)


def add_noise(mask, p: float, rng: Rng) -> np.ndarray:
    """Flip each 1-pixel to 0 independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p {p} outside [0, 1]")
    m = _as_binary(mask)
    keep = rng.random(m.shape) >= p
    return (m & keep).astype(np.uint8)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur truncated at 3 sigma, edge-replicated borders."""
    k = _gaussian_kernel(sigma)
    r = len(k) // 2
    x = np.asarray(img, np.float64)
    x = np.pad(x, ((r, r), (0, 0)), mode="edge")
    x = np.lib.stride_tricks.sliding_window_view(x, len(k), axis=0) @ k
    x = np.pad(x, ((0, 0), (r, r)), mode="edge")
    x = np.lib.stride_tricks.sliding_window_view(x, len(k), axis=1) @ k
    return x


def approximate(mask, config: MaskPipelineConfig) -> np.ndarray:
    """Blob the mask: nearest-neighbor down/upsample, blur, re-threshold."""
    m = _as_binary(mask)
    f = config.approx_downsample
    H, W = m.shape
    rows = np.minimum(((np.arange((H + f - 1) // f) * f) + f // 2), H - 1)
    cols = np.minimum(((np.arange((W + f - 1) // f) * f) + f // 2), W - 1)
    small = m[np.ix_(rows, cols)]
    up = np.repeat(np.repeat(small, f, axis=0), f, axis=1)[:H, :W]
    blurred = gaussian_blur(up, config.blur_sigma)
    return (blurred >= config.threshold).astype(np.uint8)


def joint_patches(joint_pixels, radius: int, size) -> np.ndarray:
    """Union of filled discs centered on (row, col) joint pixels.

    Discs are clipped at the image border; an empty joint list gives an
    empty mask.
    """
    if isinstance(size, int):
        size = (size, size)
    H, W = size
    mask = np.zeros((H, W), np.uint8)
    r2 = radius * radius
    for row, col in joint_pixels:
        if not (0 <= row < H and 0 <= col < W):
            raise DimensionError(f"joint ({row}, {col}) outside {H}x{W} image")
        r0, r1 = max(0, row - radius), min(H - 1, row + radius)
        c0, c1 = max(0, col - radius), min(W - 1, col + radius)
        dy = np.arange(r0, r1 + 1) - row
        dx = np.arange(c0, c1 + 1) - col
        disc = (dy[:, None] ** 2 + dx[None, :] ** 2) <= r2
        mask[r0:r1 + 1, c0:c1 + 1] |= disc.astype(np.uint8)
    return mask
