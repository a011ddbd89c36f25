"""Regions of interest: mask intersection, iris annulus and its r x t sectors.

Pixel (x, y) is sampled at its centre (x + 0.5, y + 0.5).  Sector indices use
a rubber-sheet radial coordinate measured along the ray leaving the pupil
centre, and an angle taken around the pupil centre, starting at +x and
increasing toward +y (image rows grow downward, so this is visually
clockwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, InvalidGeometry

GEOMETRY_CONVENTION = "pupil-ray"


@dataclass(frozen=True)
class AnnulusGeometry:
    pupil_center: Tuple[float, float]
    pupil_radius: float
    iris_center: Tuple[float, float]
    iris_radius: float

    def __post_init__(self):
        values = (*self.pupil_center, self.pupil_radius, *self.iris_center, self.iris_radius)
        if not all(math.isfinite(v) for v in values):
            raise InvalidGeometry("circle parameters must be finite")
        if self.pupil_radius <= 0:
            raise InvalidGeometry(f"pupil radius must be positive, got {self.pupil_radius}")
        if self.pupil_radius >= self.iris_radius:
            raise InvalidGeometry(
                f"pupil radius {self.pupil_radius} must be smaller than iris radius {self.iris_radius}"
            )
        offset = math.hypot(self.pupil_center[0] - self.iris_center[0],
                            self.pupil_center[1] - self.iris_center[1])
        if offset + self.pupil_radius > self.iris_radius:
            raise InvalidGeometry("pupil circle is not contained in the iris circle")

    @classmethod
    def concentric(cls, cx, cy, pupil_radius, iris_radius):
        return cls((float(cx), float(cy)), float(pupil_radius), (float(cx), float(cy)), float(iris_radius))


@dataclass(frozen=True)
class SectorGrid:
    geometry: AnnulusGeometry
    r: int
    t: int

    def __post_init__(self):
        if int(self.r) != self.r or int(self.t) != self.t or self.r < 1 or self.t < 1:
            raise InvalidGeometry(f"grid needs r >= 1 and t >= 1, got r={self.r}, t={self.t}")

    @property
    def n_sectors(self) -> int:
        return self.r * self.t

    def sector_id(self, i: int, j: int) -> int:
        return i * self.t + j


def _as_bits(mask) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    return np.asarray(bits, dtype=bool)


def combined_mask(pair):
    """Pixels usable in both images: ``mask_left AND mask_right``."""
    from .imageio import BinaryMask

    left = _as_bits(pair.mask_left)
    right = _as_bits(pair.mask_right)
    if left.shape != right.shape:
        raise DimensionMismatch(f"mask shapes differ: {left.shape} vs {right.shape}")
    return BinaryMask(left & right)


def _pixel_centres(width, height):
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _annulus_bits(geom: AnnulusGeometry, px, py) -> np.ndarray:
    di = np.hypot(px - geom.iris_center[0], py - geom.iris_center[1])
    dp = np.hypot(px - geom.pupil_center[0], py - geom.pupil_center[1])
    return (di <= geom.iris_radius) & (dp > geom.pupil_radius)


def annulus_mask(geom: AnnulusGeometry, width: int, height: int):
    """Pixels whose centre is inside the iris circle and strictly outside the pupil."""
    from .imageio import BinaryMask

    if not isinstance(geom, AnnulusGeometry):
        raise InvalidGeometry("expected an AnnulusGeometry")
    px, py = _pixel_centres(width, height)
    return BinaryMask(_annulus_bits(geom, px, py))


def _polar(geom: AnnulusGeometry, px, py):
    """Normalised radial position in (0, 1] and angle in [0, 2pi) for pixel centres."""
    dx = px - geom.pupil_center[0]
    dy = py - geom.pupil_center[1]
    dist = np.hypot(dx, dy)
    safe = np.where(dist > 0, dist, 1.0)
    ux, uy = dx / safe, dy / safe
    # distance from pupil centre to the iris circle along the ray
    ox = geom.pupil_center[0] - geom.iris_center[0]
    oy = geom.pupil_center[1] - geom.iris_center[1]
    b = ux * ox + uy * oy
    c = ox * ox + oy * oy - geom.iris_radius ** 2
    reach = -b + np.sqrt(np.maximum(b * b - c, 0.0))
    rho = (dist - geom.pupil_radius) / (reach - geom.pupil_radius)
    theta = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    return rho, theta


def _indices(grid: SectorGrid, rho, theta):
    i = np.clip(np.floor(grid.r * rho), 0, grid.r - 1).astype(np.int64)
    j = np.clip(np.floor(grid.t * theta / (2.0 * np.pi)), 0, grid.t - 1).astype(np.int64)
    return i, j


def sector_index(grid: SectorGrid, x, y) -> Optional[Tuple[int, int]]:
    """Return ``(radial, angular)`` indices of pixel (x, y), or None outside the annulus."""
    px = np.array(float(x) + 0.5)
    py = np.array(float(y) + 0.5)
    if not _annulus_bits(grid.geometry, px, py):
        return None
    rho, theta = _polar(grid.geometry, px, py)
    i, j = _indices(grid, rho, theta)
    return int(i), int(j)


def sector_map(grid: SectorGrid, width: int, height: int) -> np.ndarray:
    """Sector id ``i * t + j`` for every pixel, -1 outside the annulus."""
    px, py = _pixel_centres(width, height)
    inside = _annulus_bits(grid.geometry, px, py)
    rho, theta = _polar(grid.geometry, px, py)
    i, j = _indices(grid, rho, theta)
    ids = i * grid.t + j
    return np.where(inside, ids, -1)


def save_sector_map(grid: SectorGrid, width: int, height: int, path) -> None:
    """Write the sector map as a 16-bit PGM (sector id + 1, 0 outside)."""
    from .imageio import save_pgm16

    save_pgm16(sector_map(grid, width, height) + 1, path)
