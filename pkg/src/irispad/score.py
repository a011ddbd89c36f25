"""PAD scores computed from a normal field.

Two statistics are provided.  ``base_score`` is the population variance of
the Euclidean distances between each normal and the mean normal of the
region.  ``weighted_score`` works on the *squared* distances and weights each
pixel by the separability value of the sector it falls in.

All sums go through :func:`math.fsum`, so results do not depend on pixel
order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, DegenerateRegion, DimensionMismatch, EmptyRegion
from .roi import SectorGrid, sector_map


class Variant(str, enum.Enum):
    BASE = "base"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class PadScore:
    value: float
    n_pixels: int
    variant: Variant = Variant.BASE


@dataclass(frozen=True, eq=False)
class DeviationField:
    """Per-pixel squared deviations ``l`` (NaN outside the region) and the mean normal."""

    deviations: np.ndarray
    mean_normal: np.ndarray


def _fsum(values) -> float:
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist())


def _fsum_rows(vectors: np.ndarray) -> np.ndarray:
    return np.array([_fsum(vectors[:, c]) for c in range(vectors.shape[1])])


def _included(field, mask) -> np.ndarray:
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if bits.shape != field.shape:
        raise DimensionMismatch(f"mask {bits.shape} does not match field {field.shape}")
    return bits & field.valid


def _mean(vectors: np.ndarray) -> np.ndarray:
    return _fsum_rows(vectors) / vectors.shape[0]


def mean_normal(field, mask) -> np.ndarray:
    """Arithmetic mean of the unit normals in ``mask`` (not renormalised)."""
    sel = _included(field, mask)
    n = int(sel.sum())
    if n == 0:
        raise EmptyRegion("no valid normals inside the mask")
    return _mean(field.normals[sel])


def population_variance(values) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    mu = _fsum(values) / values.size
    return _fsum((values - mu) ** 2) / values.size


def _base_from_normals(normals: np.ndarray) -> float:
    nbar = _mean(normals)
    d = np.sqrt(np.sum((normals - nbar) ** 2, axis=1))
    return population_variance(d)


def base_score(field, mask) -> PadScore:
    """Variance of ``||n - n_bar||`` over the valid pixels of ``mask``."""
    sel = _included(field, mask)
    n = int(sel.sum())
    if n == 0:
        raise EmptyRegion("no valid normals inside the mask")
    if n < 2:
        raise DegenerateRegion(f"variance needs at least 2 pixels, got {n}")
    return PadScore(_base_from_normals(field.normals[sel]), n, Variant.BASE)


def pixel_weights(grid: SectorGrid, weights, width: int, height: int) -> np.ndarray:
    """Expand per-sector weights (indexed ``i * t + j``) into a per-pixel map."""
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size != grid.n_sectors:
        raise DimensionMismatch(f"expected {grid.n_sectors} sector weights, got {weights.size}")
    ids = sector_map(grid, width, height)
    return np.where(ids >= 0, weights[np.maximum(ids, 0)], 0.0)


def deviation_field(field, mask, grid: SectorGrid, weights) -> DeviationField:
    w = pixel_weights(grid, weights, field.width, field.height)
    sel = _included(field, mask) & (w > 0)
    if not sel.any():
        raise EmptyRegion("no valid normals with positive weight")
    nbar = _mean(field.normals[sel])
    l = np.full(field.shape, np.nan)
    l[sel] = np.sum((field.normals[sel] - nbar) ** 2, axis=1)
    return DeviationField(l, nbar)


def weighted_score(field, mask, grid: SectorGrid, weights) -> PadScore:
    """Sector-weighted variance of the squared deviations ``l = ||n - n_bar||^2``.

    ``weights`` holds one non-negative value per sector; pixels in zero-weight
    sectors are ignored entirely, including for the mean normal.
    """
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("sector weights must be finite and non-negative")
    if not np.any(weights > 0):
        raise AllZeroWeights("every sector weight is zero")
    w = pixel_weights(grid, weights, field.width, field.height)
    sel = _included(field, mask) & (w > 0)
    n = int(sel.sum())
    if n == 0:
        raise EmptyRegion("no valid normals with positive weight")
    normals = field.normals[sel]
    wp = w[sel]
    nbar = _mean(normals)
    l = np.sum((normals - nbar) ** 2, axis=1)
    wsum = _fsum(wp)
    lw = _fsum(wp * l) / wsum
    value = _fsum(wp * (l - lw) ** 2) / wsum
    return PadScore(value, n, Variant.WEIGHTED)
