"""Small image-geometry helpers shared by augmentation, the synthetic
generator, and overlay rendering. All pure numpy on float arrays in [0,1].

Convention matches the heatmap module: x = column, y = row, pixel centers
at integers. Resizing is corner-0 aligned: output pixel j samples input
coordinate j * (in/out), so a label at u maps to u * (out/in).
"""

from __future__ import annotations

import numpy as np

from tclnet.errors import ShapeError


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at float coordinates with bilinear weights, edge-clamped."""
    if img.ndim != 2:
        raise ShapeError(f"bilinear_sample expects a 2-D image, got {img.shape}")
    h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if img.ndim != 2:
        raise ShapeError(f"bilinear_resize expects a 2-D image, got {img.shape}")
    h, w = img.shape
    ys = np.arange(out_h, dtype=np.float64) * (h / out_h)
    xs = np.arange(out_w, dtype=np.float64) * (w / out_w)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, grid_y, grid_x).astype(img.dtype, copy=False)


def rotate_about(img: np.ndarray, cx: float, cy: float, degrees: float) -> np.ndarray:
    """Rotate the image about (cx, cy) by the given angle, bilinear resampling."""
    h, w = img.shape
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xx - cx
    dy = yy - cy
    # inverse map: output pixel pulls from the source rotated the other way
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    return bilinear_sample(img, src_y, src_x).astype(img.dtype, copy=False)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0),
                   0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


def draw_disk(rgb: np.ndarray, x: float, y: float, radius: float, color) -> None:
    """Paint a filled disk in place on an (H,W,3) uint8 image."""
    h, w = rgb.shape[:2]
    x0 = max(int(np.floor(x - radius)), 0)
    x1 = min(int(np.ceil(x + radius)) + 1, w)
    y0 = max(int(np.floor(y - radius)), 0)
    y1 = min(int(np.ceil(y + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    mask = (xx - x) ** 2 + (yy - y) ** 2 <= radius ** 2
    patch = rgb[y0:y1, x0:x1]
    patch[mask] = np.asarray(color, dtype=np.uint8)


def render_overlay(image01: np.ndarray, pred_xy, label_xy=None,
                   heatmap01: np.ndarray = None) -> np.ndarray:
    """Compose the inference overlay: grayscale image with the predicted
    center in red (and the label in blue when known), plus the predicted
    heatmap upscaled as a side panel. Returns (H, W or 2W, 3) uint8."""
    gray = to_uint8(image01)
    panel = np.stack([gray, gray, gray], axis=-1)
    h, w = gray.shape
    r = max(3.0, 0.008 * w)
    if label_xy is not None:
        draw_disk(panel, label_xy[0], label_xy[1], r, (64, 64, 255))
    draw_disk(panel, pred_xy[0], pred_xy[1], r, (255, 48, 48))
    if heatmap01 is None:
        return panel
    hm = np.asarray(heatmap01, dtype=np.float64)
    span = hm.max() - hm.min()
    hm = (hm - hm.min()) / span if span > 0 else np.zeros_like(hm)
    hm_big = to_uint8(bilinear_resize(hm, h, w))
    side = np.stack([hm_big, hm_big // 2, np.full_like(hm_big, 32)], axis=-1)
    return np.concatenate([panel, side], axis=1)
