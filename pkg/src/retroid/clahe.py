"""Contrast Limited Adaptive Histogram Equalisation, implemented from scratch.

The image is divided into a grid of tiles (ceiling tiling: the last row and
column may be smaller). Each tile's 256-bin histogram is clipped at
``clip_limit`` times the uniform bin height and the excess is redistributed
in one pass (uniform share plus a round-robin remainder starting at bin 0),
so counts are conserved exactly. Tile mappings come from the same
equalisation formula as :func:`global_he`, and each output pixel bilinearly
interpolates the four surrounding tile-center mappings, with edge tiles
extended outward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

LEVELS = 256

# BT.601 luma weights, used for the RGB path.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ClaheConfig:
    grid: tuple[int, int] = (8, 8)  # (tiles_x, tiles_y)
    clip_limit: float = 2.0         # multiple of the uniform bin height
    levels: int = LEVELS

    def __post_init__(self):
        tx, ty = self.grid
        if tx < 1 or ty < 1:
            raise ConfigurationError(f"grid must be positive, got {self.grid}")
        if self.clip_limit < 1.0:
            raise ConfigurationError(f"clip_limit must be >= 1.0, got {self.clip_limit}")
        if self.levels != LEVELS:
            raise ConfigurationError("only 256 intensity levels are supported")

    def to_json(self) -> dict:
        return {"grid": list(self.grid), "clip_limit": self.clip_limit, "levels": self.levels}

    @classmethod
    def from_json(cls, obj: dict) -> "ClaheConfig":
        return cls(
            grid=tuple(obj.get("grid", (8, 8))),
            clip_limit=float(obj.get("clip_limit", 2.0)),
            levels=int(obj.get("levels", LEVELS)),
        )


def _require_gray_u8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.size == 0:
        raise ValidationError("image is empty")
    if image.dtype != np.uint8:
        raise ValidationError(f"expected an 8-bit image, got dtype {image.dtype}")
    if image.ndim != 2:
        raise ValidationError(f"expected a single-channel image, got shape {image.shape}")
    return image


def _he_lut(hist: np.ndarray, npix: int) -> np.ndarray:
    """Equalisation lookup table for one histogram.

    L(v) = round((cdf(v) - cdf_min) / (npix - cdf_min) * (LEVELS - 1)) with
    cdf_min the cdf at the lowest occupied bin; a single-bin histogram maps
    to identity. Values below the lowest occupied bin clamp to 0.
    """
    occupied = np.flatnonzero(hist)
    if occupied.size <= 1:
        return np.arange(LEVELS, dtype=np.int32)
    cdf = np.cumsum(hist, dtype=np.int64)
    cdf_min = int(cdf[occupied[0]])
    denom = npix - cdf_min
    lut = np.rint((cdf - cdf_min) / denom * (LEVELS - 1))
    return np.clip(lut, 0, LEVELS - 1).astype(np.int32)


def global_he(image: np.ndarray) -> np.ndarray:
    """Plain (global) histogram equalisation of an 8-bit single-channel image."""
    image = _require_gray_u8(image)
    hist = np.bincount(image.ravel(), minlength=LEVELS)
    lut = _he_lut(hist, image.size)
    return lut[image].astype(np.uint8)


def clip_histogram(hist: np.ndarray, clip_abs: int) -> np.ndarray:
    """Clip bins at ``clip_abs`` and redistribute the excess, conserving counts.

    The excess is shared uniformly over all bins; any remainder goes one count
    at a time round-robin starting from bin 0. Single pass: bins that received
    a share may end slightly above ``clip_abs``.
    """
    if clip_abs < 1:
        raise ValidationError(f"clip_abs must be >= 1, got {clip_abs}")
    hist = np.asarray(hist, dtype=np.int64)
    excess = int(np.maximum(hist - clip_abs, 0).sum())
    if excess == 0:
        return hist.copy()
    out = np.minimum(hist, clip_abs)
    share, remainder = divmod(excess, hist.size)
    out += share
    out[:remainder] += 1
    return out


def _tile_edges(length: int, tiles: int) -> np.ndarray:
    """Boundaries of ceiling tiling: tile size ceil(length/tiles)."""
    step = -(-length // tiles)
    edges = list(range(0, length, step)) + [length]
    return np.asarray(edges)


def _tile_luts_and_centers(
    gray: np.ndarray, cfg: ClaheConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = gray.shape
    tiles_x, tiles_y = cfg.grid
    if w < 2 * tiles_x or h < 2 * tiles_y:
        raise ConfigurationError(
            f"image {w}x{h} is too small for grid {cfg.grid}: tiles need at least 2x2 px"
        )
    x_edges = _tile_edges(w, tiles_x)
    y_edges = _tile_edges(h, tiles_y)
    nx = len(x_edges) - 1
    ny = len(y_edges) - 1
    luts = np.empty((ny, nx, LEVELS), dtype=np.int32)
    for ty in range(ny):
        for tx in range(nx):
            tile = gray[y_edges[ty]:y_edges[ty + 1], x_edges[tx]:x_edges[tx + 1]]
            hist = np.bincount(tile.ravel(), minlength=LEVELS)
            if np.count_nonzero(hist) <= 1:
                # Constant tile: identity before clipping can smear the bin.
                luts[ty, tx] = np.arange(LEVELS, dtype=np.int32)
                continue
            clip_abs = max(1, int(cfg.clip_limit * tile.size / LEVELS))
            luts[ty, tx] = _he_lut(clip_histogram(hist, clip_abs), tile.size)
    cx = (x_edges[:-1] + x_edges[1:] - 1) / 2.0
    cy = (y_edges[:-1] + y_edges[1:] - 1) / 2.0
    return luts, cx, cy


def _interp_coords(coords: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower tile index, upper tile index and fraction for each coordinate."""
    lo = np.searchsorted(centers, coords, side="right") - 1
    lo = np.clip(lo, 0, len(centers) - 1)
    hi = np.clip(lo + 1, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return lo, hi, frac


def _clahe_gray(gray: np.ndarray, cfg: ClaheConfig) -> np.ndarray:
    h, w = gray.shape
    luts, cx, cy = _tile_luts_and_centers(gray, cfg)
    tx0, tx1, fx = _interp_coords(np.arange(w, dtype=np.float64), cx)
    ty0, ty1, fy = _interp_coords(np.arange(h, dtype=np.float64), cy)
    m00 = luts[ty0[:, None], tx0[None, :], gray]
    m01 = luts[ty0[:, None], tx1[None, :], gray]
    m10 = luts[ty1[:, None], tx0[None, :], gray]
    m11 = luts[ty1[:, None], tx1[None, :], gray]
    fx = fx[None, :]
    fy = fy[:, None]
    top = (1.0 - fx) * m00 + fx * m01
    bottom = (1.0 - fx) * m10 + fx * m11
    out = (1.0 - fy) * top + fy * bottom
    return np.clip(np.rint(out), 0, LEVELS - 1).astype(np.uint8)


def clahe(image: np.ndarray, cfg: ClaheConfig | None = None) -> np.ndarray:
    """Apply CLAHE to an 8-bit grayscale or RGB image.

    RGB images are equalised on the BT.601 luma channel and the color
    channels are rescaled by the per-pixel luma ratio.
    """
    cfg = cfg or ClaheConfig()
    image = np.asarray(image)
    if image.size == 0:
        raise ValidationError("image is empty")
    if image.dtype != np.uint8:
        raise ValidationError(f"expected an 8-bit image, got dtype {image.dtype}")
    if image.ndim == 2:
        return _clahe_gray(image, cfg)
    if image.ndim == 3 and image.shape[2] == 3:
        luma = np.rint(image.astype(np.float64) @ _LUMA).clip(0, 255).astype(np.uint8)
        eq = _clahe_gray(luma, cfg).astype(np.float64)
        scale = eq / np.maximum(luma.astype(np.float64), 1.0)
        out = np.rint(image.astype(np.float64) * scale[..., None])
        return np.clip(out, 0, 255).astype(np.uint8)
    raise ValidationError(f"unsupported image shape {image.shape}")
