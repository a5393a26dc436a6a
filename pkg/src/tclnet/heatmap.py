"""Gaussian target heatmaps and argmax decoding.

A center label (u, v) in input-image pixels becomes a Gaussian bump on a
grid alpha times smaller: H(x, y) = exp(-((x - alpha*u)^2 + (y - alpha*v)^2)
/ (2 sigma^2)), evaluated at integer grid points without rounding the center
first, so targets keep sub-pixel information. Decoding is plain argmax
(first occurrence in row-major order) scaled back by 1/alpha.

Coordinate convention everywhere: x = column, y = row, origin at the
top-left pixel center, pixel centers at integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tclnet.errors import ConfigError, DomainError, NumericError, ShapeError
from tclnet.tensor import SINGLE, Tensor


@dataclass(frozen=True)
class CenterLabel:
    """Cyclone-center coordinates in input-image pixels (x = column u, y = row v)."""
    u: float
    v: float


@dataclass(frozen=True)
class HeatmapParams:
    alpha: float = 0.25
    sigma: float = 15.0
    map_size: int = 128

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0,1], got {self.alpha}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.map_size < 1:
            raise ConfigError(f"map_size must be positive, got {self.map_size}")
        size = self.map_size / self.alpha
        if abs(size - round(size)) > 1e-9:
            raise ConfigError(f"map_size/alpha = {size} is not an integer "
                              f"input size")

    @property
    def input_size(self) -> int:
        return int(round(self.map_size / self.alpha))


def encode(label: CenterLabel, params: HeatmapParams, dtype=SINGLE) -> Tensor:
    """Render the Gaussian target for one label; values in (0,1], max at the
    grid point nearest (alpha*u, alpha*v)."""
    size = params.input_size
    u, v = float(label.u), float(label.v)
    if not (np.isfinite(u) and np.isfinite(v)):
        raise DomainError(f"label ({u}, {v}) is not finite")
    if not (0.0 <= u < size and 0.0 <= v < size):
        raise DomainError(f"label ({u}, {v}) outside [0, {size}) bounds")
    m = params.map_size
    cx, cy = params.alpha * u, params.alpha * v
    xs = np.arange(m, dtype=np.float64)
    dx2 = (xs - cx) ** 2
    dy2 = (xs - cy) ** 2
    grid = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * params.sigma ** 2))
    return Tensor(grid.reshape(1, m, m), dtype=dtype)


def decode(pred, params: HeatmapParams) -> CenterLabel:
    """Argmax of the map (row-major first tie), scaled to input coordinates."""
    data = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    data = np.squeeze(data)
    if data.ndim != 2:
        raise ShapeError(f"decode expects a single 2-D map, got shape "
                         f"{np.shape(pred.data if isinstance(pred, Tensor) else pred)}")
    if data.size == 0:
        raise DomainError("decode of an empty map")
    m = params.map_size
    if data.shape != (m, m):
        raise ShapeError(f"decode expects a {m}x{m} map for these parameters, "
                         f"got {data.shape[0]}x{data.shape[1]}")
    if np.isnan(data).any():
        raise NumericError("decode of a map containing NaN")
    y, x = np.unravel_index(int(np.argmax(data)), data.shape)
    return CenterLabel(u=x / params.alpha, v=y / params.alpha)


def sigma_sweep_targets(labels, sigmas, alpha=0.25, map_size=128):
    """One encoded target batch per sigma; the harness behind the
    standard-deviation sweep experiment."""
    out = {}
    for sigma in sigmas:
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        params = HeatmapParams(alpha=alpha, sigma=float(sigma), map_size=map_size)
        batch = np.stack([encode(lb, params).data for lb in labels])
        out[float(sigma)] = batch
    return out
